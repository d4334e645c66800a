"""``segfake`` command line: extract, pretest, evaluate, report, synth-corpus.

Exit codes: 0 success, 1 usage or configuration error, 2 total failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, add_config_flags, resolve
from .features import TokenStore, extract_file, read_manifest, read_tokens, token_rows
from .harness import (
    CONDITION_CLASSES,
    SCORE_COLUMNS,
    InsufficientData,
    class_tokens,
    compare_conditions,
    default_plans,
    load_plans,
    rank_features,
    run_condition,
)
from .gmm import PretestError, pretest_components
from .report import DENSITY_COLUMNS, ELLIPSE_COLUMNS, FBANK_COLUMNS, emit_ellipses, emit_fbank_profile, emit_ltfd_density
from .synth import CorpusSpec, generate_corpus

log = logging.getLogger("segfake")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
RESULT_COLUMNS = ["Condition", "Feature", "Cllr (mean)", "SD", "EER (% mean)"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same folder, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metadata_line(cfg: RunConfig) -> str:
    return f"# segfake version={__version__} seed={cfg.master_seed} config={cfg.digest()}\n"


def csv_text(rows, cfg: RunConfig | None = None) -> str:
    buf = io.StringIO()
    if cfg is not None:
        buf.write(metadata_line(cfg))
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def json_text(doc, cfg: RunConfig | None = None) -> str:
    if cfg is not None:
        doc = {"meta": {"version": __version__, "seed": cfg.master_seed, "config": cfg.digest()}, **doc}
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _safe(name: str) -> str:
    return re.sub(r"[^\w.-]+", "_", name)


def _load_tokens(cfg: RunConfig) -> TokenStore:
    path = Path(cfg.tokens_path) if cfg.tokens_path else Path(cfg.output_dir) / "tokens.csv"
    if not path.exists():
        raise UsageError(f"token file {path} not found; run `segfake extract` first or pass --tokens-path")
    return read_tokens(path)


def _plans(cfg: RunConfig, store: TokenStore):
    if cfg.plans_path:
        return load_plans(cfg.plans_path)
    families = [f for f in cfg.families if f in ("MF", "LTFD", "LTF0", "MFCC")]
    return default_plans(store, families=tuple(families), **cfg.plan_defaults())


# --- commands ----------------------------------------------------------------


def cmd_extract(cfg: RunConfig, args) -> int:
    if not cfg.manifest_path:
        raise UsageError("extract needs --manifest-path (or manifest_path in the config)")
    entries = read_manifest(cfg.manifest_path)
    ecfg = cfg.extraction()
    store, infos, failures = TokenStore(), [], []
    for e in entries:
        try:
            s, info = extract_file(e, ecfg, tuple(cfg.families))
        except Exception as exc:  # one bad file must not sink the corpus
            log.error("skipping %s: %s", e.file_path, exc)
            failures.append({"file": e.file_path, "error": f"{type(exc).__name__}: {exc}"})
            continue
        store.extend(s)
        infos.append(info)
    if not entries:
        log.warning("manifest %s lists no files", cfg.manifest_path)
    store.sort()
    out = Path(cfg.output_dir)
    atomic_write(out / "tokens.csv", csv_text(token_rows(store), cfg))
    atomic_write(out / "extraction_log.json", json_text({"files": infos, "failures": failures}, cfg))
    log.info("%d tokens from %d/%d files", len(store), len(infos), len(entries))
    if entries and not infos:
        log.error("every file failed")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_pretest(cfg: RunConfig, args) -> int:
    store = _load_tokens(cfg)
    reports = []
    for plan in _plans(cfg, store):
        ta, _ = class_tokens(plan, store)
        rec = {"plan": plan.to_dict(), "feature": plan.label, "n_tokens": len(ta)}
        try:
            X = np.vstack([t.vector for t in ta]) if ta else np.zeros((0, 1))
            rec["pretest"] = pretest_components(X, plan.pretest_grid, plan.pretest_folds, cfg.gmm()).to_dict()
        except (PretestError, ValueError) as exc:
            rec["error"] = str(exc)
        reports.append(rec)
    atomic_write(Path(cfg.output_dir) / "pretest.json", json_text({"pretests": reports}, cfg))
    return EXIT_OK


def _fmt(x: float) -> str:
    return "" if x is None or not np.isfinite(x) else f"{x:.6f}"


def cmd_evaluate(cfg: RunConfig, args) -> int:
    store = _load_tokens(cfg)
    plans = _plans(cfg, store)
    done, skipped = [], []
    for plan in plans:
        res = run_condition(plan, store, workers=cfg.workers)
        if isinstance(res, InsufficientData):
            log.warning("skipping %s %s %s: %s", plan.speaker, plan.condition_pair, plan.label, res.reason)
            skipped.append(res)
        else:
            done.append(res)

    out = Path(cfg.output_dir)
    by_speaker = defaultdict(list)
    for r in done:
        by_speaker[r.plan.speaker].append(r)
    comparisons = []
    for spk in sorted(by_speaker):
        rows = [RESULT_COLUMNS]
        for pair in CONDITION_CLASSES:
            group = [r for r in by_speaker[spk] if r.plan.condition_pair == pair]
            if not group:
                continue
            for r in rank_features(group):
                rows.append([pair, r.plan.label, _fmt(r.cllr_mean), _fmt(r.cllr_sd), _fmt(r.eer_mean_percent)])
        atomic_write(out / f"results_{_safe(spk)}.csv", csv_text(rows, cfg))
        index = {(r.plan.condition_pair, r.plan.family, r.plan.phoneme): r for r in by_speaker[spk]}
        for (pair, fam, ph), r in sorted(index.items(), key=lambda kv: (kv[0][1], kv[0][2] or "")):
            other = index.get(("s1_vs_s2", fam, ph))
            if pair == "real_vs_fake" and other is not None:
                comparisons.append(compare_conditions(r, other).to_dict())

    score_rows = [SCORE_COLUMNS] + [row for r in done for row in r.score_rows()]
    atomic_write(out / "scores.csv", csv_text(score_rows, cfg))
    doc = {
        "eer_estimator": "linear interpolation between the operating points where miss - false alarm changes sign",
        "results": [r.to_dict() for r in done],
        "skipped_plans": [s.to_dict() for s in skipped],
        "comparisons": comparisons,
    }
    atomic_write(out / "results.json", json_text(doc, cfg))
    if plans and not done:
        log.error("no plan had enough data")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    store = _load_tokens(cfg)
    out = Path(cfg.output_dir)
    ceiling = cfg.formant_ceiling
    written = 0
    for spk in store.speakers():
        mf = store.select(speaker=spk, family="MF")
        if mf:
            rows = [ELLIPSE_COLUMNS] + [e.row() for e in emit_ellipses(mf, cfg.confidence)]
            atomic_write(out / f"ellipses_{_safe(spk)}.csv", csv_text(rows, cfg))
            written += 1
        ltfd = store.select(speaker=spk, family="LTFD")
        for cond in sorted({t.condition for t in ltfd}):
            toks = [t for t in ltfd if t.condition == cond]
            for i in (1, 2, 3):
                hz, dens = emit_ltfd_density(toks, i, ceiling=cfg.speaker_ceilings.get(spk, ceiling))
                rows = [DENSITY_COLUMNS] + [[repr(float(h)), repr(float(d))] for h, d in zip(hz, dens)]
                atomic_write(out / f"ltfd_{_safe(spk)}_{cond}_F{i}.csv", csv_text(rows, cfg))
                written += 1
        fb = store.select(speaker=spk, family="FBANK")
        for prof in emit_fbank_profile(fb):
            rows = [FBANK_COLUMNS] + prof.rows()
            atomic_write(out / f"fbank_{_safe(spk)}_{prof.condition}.csv", csv_text(rows, cfg))
            written += 1
    log.info("wrote %d plot-data files", written)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = CorpusSpec()
    if args.spec:
        spec = CorpusSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    if args.tokens_per_vowel is not None:
        spec.tokens_per_vowel = args.tokens_per_vowel
    doc = generate_corpus(args.out, spec, args.seed)
    log.info("wrote %d files to %s", len(doc["files"]), args.out)
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "pretest": cmd_pretest, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segfake", description="Segmental-feature deepfake evaluation.")
    p.add_argument("--version", action="version", version=f"segfake {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "extract": "extract feature tokens from a manifest",
        "pretest": "choose GMM component counts per plan",
        "evaluate": "run the repeated Cllr/EER experiments",
        "report": "write ellipse, density and FBank plot data",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="JSON run configuration")
        add_config_flags(sp)
    sp = sub.add_parser("synth-corpus", help="generate a synthetic vowel corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--spec", help="JSON corpus parameters")
    sp.add_argument("--tokens-per-vowel", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth-corpus":
            return cmd_synth(args)
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"segfake: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
