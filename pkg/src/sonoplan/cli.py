"""Command-line interface.

Subcommands: plan, segment, ingest-knowledge, eval, phantom, serve, demo.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from . import api, segtool, strategy, workflow
from .core import parse_case, read_volume, write_mask, write_volume
from .memory import MemoryIndex, ingest_directory
from .planner import PlannerConfig
from .segtool import Ellipsoid, PhantomSpec, make_phantom, parse_prompt_spec


def _cmd_plan(args) -> int:
    store_dir = args.store or tempfile.mkdtemp(prefix="sonoplan-")
    engine = workflow.open_engine(store_dir)
    if args.knowledge:
        index = engine.memory_index or MemoryIndex()
        ingest_directory(args.knowledge, index)
        index.save(Path(store_dir) / workflow.KNOWLEDGE_INDEX_FILE)
        engine.memory_index = index
    cfg = PlannerConfig(
        enable_executor=not args.no_executor,
        enable_optimizer=not args.no_optimizer,
        enable_memory=not args.no_memory,
    )
    case_path = Path(args.case)
    case = parse_case(case_path.read_text())
    stored = engine.store.ingest_case(case, base_dir=case_path.parent)
    record = engine.run_case(stored, cfg)
    print(f"status: {record.status.value}")
    if record.final_plan_text:
        print(record.final_plan_text)
    for agent, t in sorted(record.telemetry.items()):
        print(
            f"# {agent}: {t['running_time_s']:.3f}s, {t['token_usage']} tokens, "
            f"success={t['success']}"
        )
    print(f"# store: {store_dir}")
    return 0 if record.status is not None else 1


def _cmd_segment(args) -> int:
    volume = read_volume(args.volume)
    prompt = parse_prompt_spec(args.prompt)
    mask = segtool.segment(volume, prompt)
    out = args.out or "mask.rmsk"
    write_mask(out, mask.binarize())
    print(f"mask: {out} ({mask.foreground_count()} voxels)")
    return 0


def _cmd_ingest(args) -> int:
    store = workflow.Store(args.store)
    index_path = store.root / workflow.KNOWLEDGE_INDEX_FILE
    index = MemoryIndex.load(index_path) if index_path.exists() else MemoryIndex()
    n = ingest_directory(args.dir, index)
    index.save(index_path)
    print(f"ingested {n} documents; index now holds {len(index)} chunks")
    return 0


def _cmd_eval(args) -> int:
    ref = Path(args.ref).read_text()
    hyp = Path(args.hyp).read_text()
    scores = {}
    scores.update(strategy.rouge(ref, hyp))
    scores.update(strategy.bleu(ref, hyp))
    print(json.dumps(scores, indent=2, sort_keys=True))
    return 0


def _cmd_phantom(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    spec = PhantomSpec(
        dims=tuple(doc["dims"]),
        spacing=tuple(doc["spacing"]),
        ellipsoids=tuple(
            Ellipsoid(tuple(e["center_mm"]), tuple(e["semiaxes_mm"]), float(e["intensity"]))
            for e in doc.get("ellipsoids", [])
        ),
        background=float(doc.get("background", 0.0)),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        rng_seed=int(doc.get("rng_seed", 0)),
    )
    volume, truth = make_phantom(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(out / "volume.rvol", volume)
    write_mask(out / "truth.rmsk", truth)
    print(f"wrote {out / 'volume.rvol'} and {out / 'truth.rmsk'}")
    return 0


def _cmd_serve(args) -> int:
    api.serve(args.store, args.port)
    return 0


def _cmd_demo(args) -> int:
    case_id = workflow.seed_demo_store(args.store, seed=args.seed)
    print(f"seeded demo store at {args.store}; escalated case: {case_id}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sonoplan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="run one case through the planning loop")
    sp.add_argument("--case", required=True, help="case document (JSON)")
    sp.add_argument("--no-executor", action="store_true")
    sp.add_argument("--no-optimizer", action="store_true")
    sp.add_argument("--no-memory", action="store_true")
    sp.add_argument("--store", help="store directory (temp dir when omitted)")
    sp.add_argument("--knowledge", help="knowledge directory to ingest first")
    sp.set_defaults(func=_cmd_plan)

    sp = sub.add_parser("segment", help="segment a volume with a prompt")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--prompt", required=True, help="auto | click:x,y,z,+;... | bbox:x0,y0,z0,x1,y1,z1")
    sp.add_argument("--out", help="output mask path (default mask.rmsk)")
    sp.set_defaults(func=_cmd_segment)

    sp = sub.add_parser("ingest-knowledge", help="ingest a knowledge directory into a store")
    sp.add_argument("dir")
    sp.add_argument("--store", required=True)
    sp.set_defaults(func=_cmd_ingest)

    sp = sub.add_parser("eval", help="score a hypothesis text against a reference")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", required=True)
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("phantom", help="render a phantom volume from a spec file")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_phantom)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--port", type=int, required=True)
    sp.add_argument("--store", required=True)
    sp.set_defaults(func=_cmd_serve)

    sp = sub.add_parser("demo", help="seed a store with knowledge and an escalated demo case")
    sp.add_argument("--store", required=True)
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=_cmd_demo)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
