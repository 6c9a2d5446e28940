"""Run directories, the stage manifest and the stage implementations.

Layout: ``<output_dir>/<config hash>/{entities,qa,checkpoints,traces,reports}``
plus ``manifest.json``. A stage runs only after its upstream stages are
marked done, and a finished stage is skipped unless forced. Timestamps live
only in the manifest so that every other artifact is byte-reproducible.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass

from . import config as C
from .datasets import load_ocr_dir, read_golds
from .evaluation import build_report
from .inference import Query, read_traces, run_loop, vanilla_state, write_traces
from .inquiry import GenerationOptions, build_subsets, generate_corpus, read_records, subset_stats, write_records
from .jsonl import read_lines, write_lines
from .llm import Gateway, ScriptMiss, TransportError, make_backend, parse_answer
from .structure import GridSpec, normalize_ocr, normalize_pdf, read_jsonl, write_jsonl

log = logging.getLogger(__name__)

STAGES = ("parse", "generate", "verify", "tune", "infer", "eval")
UPSTREAM = {
    "parse": (),
    "generate": ("parse",),
    "verify": ("generate",),
    "tune": ("verify",),
    "infer": ("parse",),
    "eval": ("infer",),
}
SUBDIRS = ("entities", "qa", "checkpoints", "traces", "reports")


class StageError(RuntimeError):
    pass


@dataclass
class Run:
    cfg: dict
    root: str
    hash: str

    @classmethod
    def open(cls, cfg: dict, create: bool = True) -> "Run":
        h = C.config_hash(cfg)
        root = os.path.join(cfg["output_dir"], h)
        run = cls(cfg, root, h)
        if create:
            for sub in SUBDIRS:
                os.makedirs(os.path.join(root, sub), exist_ok=True)
            if not os.path.exists(run.manifest_path):
                run._write_manifest({"config_hash": h, "seed": cfg["seed"], "stages": {}})
            with open(os.path.join(root, "config.yaml"), "w", encoding="utf-8") as fh:
                fh.write(C.dump_yaml(cfg))
        return run

    # ------------------------------------------------------------ paths

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    @property
    def manifest_path(self) -> str:
        return self.path("manifest.json")

    @property
    def meta(self) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg["seed"]}

    @property
    def entities_path(self) -> str:
        return self.path("entities", "entities.jsonl")

    @property
    def records_path(self) -> str:
        return self.path("qa", "records.jsonl")

    @property
    def traces_path(self) -> str:
        return self.path("traces", "traces.jsonl")

    def checkpoint_path(self) -> str:
        return self.path("checkpoints", C.tuning_config(self.cfg).checkpoint_name())

    # ------------------------------------------------------------ manifest

    def manifest(self) -> dict:
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def _write_manifest(self, data: dict) -> None:
        tmp = self.manifest_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.manifest_path)

    def done(self, stage: str) -> bool:
        return bool(self.manifest()["stages"].get(stage, {}).get("done"))

    def mark(self, stage: str, artifacts: list[str], **extra) -> None:
        m = self.manifest()
        m["stages"][stage] = {"done": True, "artifacts": artifacts, "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"), **extra}
        self._write_manifest(m)

    def require(self, stage: str) -> None:
        missing = [u for u in UPSTREAM[stage] if not self.done(u)]
        if missing:
            raise StageError(f"stage {stage!r} needs {', '.join(missing)} to finish first")

    # ------------------------------------------------------------ shared objects

    def gateway(self, sets=None, records=None) -> Gateway:
        b = self.cfg["backend"]
        extra = {}
        if b["id"] == "simulated":
            golds = {}
            if self.cfg["dataset"].get("golds"):
                golds.update({(g.doc_id, g.question): g.answer for g in read_golds(self.cfg["dataset"]["golds"])})
            for r in records or ():
                golds.setdefault((r.doc_id, r.semantic.question), r.semantic.answer)
            extra = {"golds": golds, "distractors": {es.doc_id: [e.content for e in es.entities] for es in sets or ()},
                     "seed": self.cfg["seed"]}
        backend = make_backend(b, **extra)
        return Gateway(backend, b["retries"], b["backoff_base"], b["max_in_flight"], b["rate_limit_per_s"])


# ---------------------------------------------------------------- stages


def stage_parse(run: Run) -> str:
    ds = run.cfg["dataset"]
    if not ds.get("ocr_dir") and not ds.get("pdf_dir"):
        raise StageError("dataset needs ocr_dir or pdf_dir")
    sets = [normalize_ocr(r) for r in load_ocr_dir(ds["ocr_dir"])] if ds.get("ocr_dir") else []
    if ds.get("pdf_dir"):
        sets += [normalize_pdf(r) for r in load_ocr_dir(ds["pdf_dir"])]
    ids = [es.doc_id for es in sets]
    if len(set(ids)) != len(ids):
        raise StageError("duplicate doc_id across parsed inputs")
    write_jsonl(sets, run.entities_path, run.meta)
    run.mark("parse", [run.entities_path], documents=len(sets))
    return run.entities_path


def stage_generate(run: Run) -> str:
    sets = read_jsonl(run.entities_path)
    g = run.cfg["generation"]
    opts = GenerationOptions(g["entities_per_doc"], g["doc_type"], g["verify_with_image"],
                             GridSpec(run.cfg["grid"]["rows"], run.cfg["grid"]["cols"]), g["workers"])
    records = generate_corpus(sets, run.gateway(sets), run.cfg["seed"], opts)
    write_records(records, run.records_path, run.meta)
    n_gold = len(read_golds(run.cfg["dataset"]["golds"])) if run.cfg["dataset"].get("golds") else 0
    stats = {**run.meta, "dataset": run.cfg["dataset"]["name"], **subset_stats(records, len(sets), n_gold)}
    stats_path = run.path("qa", "stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
    run.mark("generate", [run.records_path, stats_path], records=len(records))
    # verification flags are produced in-line by generation
    run.mark("verify", [run.records_path])
    return run.records_path


def collect_priors(run: Run, sets, records) -> dict[tuple[str, str], str]:
    """Plain-prompt generator answers to each training question (the prior answer a)."""
    by_doc = {es.doc_id: es for es in sets}
    loop = C.loop_config(run.cfg)
    loop.doc_type = run.cfg["generation"]["doc_type"]
    gw = run.gateway(sets, records)
    out = {}
    for r in records:
        key = (r.doc_id, r.semantic.question)
        if key in out:
            continue
        try:
            out[key] = parse_answer(gw.ask(vanilla_state(by_doc[r.doc_id], r.semantic.question, loop)))
        except (TransportError, ScriptMiss):
            continue
    return out


def stage_tune(run: Run) -> str:
    import torch

    from .warmer.model import Warmer
    from .warmer.tuning import tune

    sets = read_jsonl(run.entities_path)
    records = read_records(run.records_path)
    tcfg = C.tuning_config(run.cfg)
    subset = build_subsets(records)[tcfg.subset_id]
    priors = collect_priors(run, sets, subset) if tcfg.use_prior_answer else None
    torch.manual_seed(run.cfg["seed"])
    model = Warmer(C.warmer_config(run.cfg))
    report = tune(model, records, sets, tcfg, priors)
    ckpt = run.checkpoint_path()
    model.save(ckpt, extra={**run.meta, "label": tcfg.label})
    report.checkpoint = os.path.basename(ckpt)
    rep_path = run.path("reports", "tuning.json")
    data = {**run.meta, **json.loads(report.to_json())}
    with open(rep_path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
    run.mark("tune", [ckpt, rep_path])
    return ckpt


def stage_infer(run: Run) -> str:
    loop = C.loop_config(run.cfg)
    loop.doc_type = run.cfg["generation"]["doc_type"]
    if loop.use_warmer:
        run.require("tune")
    if not run.cfg["dataset"].get("golds"):
        raise StageError("infer needs dataset.golds for the question list")
    sets = {es.doc_id: es for es in read_jsonl(run.entities_path)}
    golds = read_golds(run.cfg["dataset"]["golds"])
    unknown = sorted({g.doc_id for g in golds} - set(sets))
    if unknown:
        raise StageError(f"questions reference unknown documents: {', '.join(unknown[:10])}")
    warmer = None
    if loop.use_warmer:
        from .warmer.model import Warmer

        warmer = Warmer.load(run.checkpoint_path(), C.warmer_config(run.cfg).digest())
    # resume: questions already in the trace file are not recomputed
    done: set[str] = set()
    if os.path.exists(run.traces_path):
        done = {row["qid"] for row in read_lines(run.traces_path)}
    else:
        write_lines(run.traces_path, (), run.meta)
    gw = run.gateway(list(sets.values()))
    feats = {}
    for g in golds:
        if g.qid in done:
            continue
        es = sets[g.doc_id]
        if warmer is not None and g.doc_id not in feats:
            feats[g.doc_id] = warmer.document_features(es)
        trace = run_loop(es, feats.get(g.doc_id), g.question, warmer, gw, loop, g.qid)
        write_traces([trace], run.traces_path, append=True)
        done.add(g.qid)
    run.mark("infer", [run.traces_path], questions=len(done))
    return run.traces_path


def stage_eval(run: Run) -> str:
    golds = {g.qid: g.answer for g in read_golds(run.cfg["dataset"]["golds"])}
    traces = [t.to_dict() for t in read_traces(run.traces_path)]
    loop = C.loop_config(run.cfg)
    label = loop.label
    if loop.use_warmer:
        label = f"{C.tuning_config(run.cfg).label} {label}"
    report = build_report(traces, None, golds, run.cfg["dataset"]["name"], label,
                          config_hash=run.hash, seed=run.cfg["seed"])
    json_path, txt_path = run.path("reports", "report.json"), run.path("reports", "report.txt")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_table())
    run.mark("eval", [json_path, txt_path])
    return json_path


STAGE_FUNCS = {"parse": stage_parse, "generate": stage_generate, "tune": stage_tune,
               "infer": stage_infer, "eval": stage_eval}


def run_stage(run: Run, stage: str, force: bool = False) -> bool:
    """Run one stage; returns False when it was already done and skipped."""
    if stage == "verify":
        stage = "generate"
    run.require(stage)
    if run.done(stage) and not force:
        log.info("stage %s already done for %s; skipping", stage, run.hash)
        return False
    if force and stage == "infer" and os.path.exists(run.traces_path):
        os.remove(run.traces_path)
    STAGE_FUNCS[stage](run)
    return True


def pipeline_stages(cfg: dict) -> list[str]:
    stages = ["parse", "generate", "tune", "infer", "eval"]
    if not C.loop_config(cfg).use_warmer:
        stages.remove("tune")
    return stages
