"""Command-line entry point (``rfadv``)."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import harness as H
from .config import RunConfig
from .errors import (
    ChecksumMismatch,
    ConfigError,
    InvalidParams,
    MissingArtifact,
    RfadvError,
    ShapeMismatch,
    VerificationFailure,
)
from .models import ARCHS, build, load_checkpoint, save_checkpoint, verify_checkpoint
from .receiver import load_dataset, preprocess_collection, save_dataset
from .trainer import evaluate, train, write_history_csv
from .waveform import load_raw, sample_fingerprints, save_raw, synth_dataset

log = logging.getLogger("rfadv")

FIGURES = ("psr-sweep", "targeted-matrix", "crossmodel-table", "crossday", "crossdevice", "realtime", "practical")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error(ConfigError(message))
        raise SystemExit(2)


def _emit_error(exc: Exception):
    code = getattr(exc, "exit_code", 4)
    rec = {"error": getattr(exc, "kind", type(exc).__name__), "type": type(exc).__name__,
           "message": str(exc), "exit_code": code}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _fresh_dir(path) -> Path:
    """Output directories are write-once."""
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise InvalidParams(f"output directory {p} already exists; outputs are never overwritten")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash(), "master_seed": cfg.seed}


def _write_json(path: Path, obj) -> Path:
    return H.write_report(obj, path)


def _out_dir(args, cfg: RunConfig, name: str) -> Path:
    if args.out:
        return _fresh_dir(args.out)
    return _fresh_dir(cfg.output_root() / "runs" / f"{name}-{cfg.hash()}")


def _lab(cfg: RunConfig, args) -> H.Lab:
    return H.Lab(cfg.lab_setup(), cfg.output_root() / "cache", workers=args.workers)


def _ref(text: str) -> H.ModelRef:
    if "@" not in text:
        raise ConfigError(f"model reference {text!r} must look like ARCH@DATASET (e.g. CNN1@G1-victim)")
    a, d = text.split("@", 1)
    if a not in ARCHS:
        raise InvalidParams(f"unknown architecture {a!r}")
    return H.ModelRef(a, d)


def _sweep(cfg):
    return [float(q) for q in cfg["scenario"]["psr_sweep"]]


def _uap_cfg(cfg: RunConfig, p_x: float = 1.0, seed=None):
    a = cfg["attack"]
    c = cfg.attack_config(atk.eps_for_psr(p_x, float(a["uap_psr_db"])), method="UAP")
    return c if seed is None else c.__class__(**{**c.__dict__, "seed": int(seed)})


# -- subcommands -----------------------------------------------------------


def cmd_synth(args, cfg):
    out = _out_dir(args, cfg, "synth")
    w = cfg["waveform"]
    days = [int(d) for d in (args.days.split(",") if args.days else w["days"])]
    seed_grp = int(w["groups"][args.group]) if args.group in w["groups"] else None
    if seed_grp is None:
        raise ConfigError(f"unknown device group {args.group!r}")
    fps = sample_fingerprints(int(w["n_devices"]), seed_grp)
    raw = synth_dataset(cfg.chirp(), fps, days, args.packets or int(w["train_packets"]), float(w["snr_db"]),
                        seed=cfg.seed if args.seed is None else args.seed)
    out.rmdir()  # save_raw creates it
    save_raw(raw, out, _stamp(cfg))
    return {"out": str(out), "n_packets": len(raw)}


def cmd_preprocess(args, cfg):
    raw = load_raw(args.raw)
    ds = preprocess_collection(raw, cfg.pipeline(), workers=args.workers)
    out = _out_dir(args, cfg, "dataset")
    out.rmdir()  # save_dataset creates it
    save_dataset(ds, out, _stamp(cfg))
    return {"out": str(out), "n": len(ds), "dropped": ds.meta["dropped"]}


def cmd_train(args, cfg):
    ds = load_dataset(args.dataset)
    m = build(args.arch, ds.shape, ds.n_classes, int(cfg["model"]["init_seed"]))
    m, hist = train(m, ds, cfg.train_config(),
                    progress=lambda r: log.info("epoch %d val_loss %.4f val_acc %.3f", r["epoch"], r["val_loss"],
                                                r["val_acc"]))
    out = _out_dir(args, cfg, f"model-{args.arch}")
    save_checkpoint(m, out, {**_stamp(cfg), "dataset": str(args.dataset)})
    write_history_csv(hist, out / "history.csv")
    return {"out": str(out), "best_val_loss": min(h["val_loss"] for h in hist), "epochs": len(hist)}


def cmd_evaluate(args, cfg):
    ds = load_dataset(args.dataset)
    m = load_checkpoint(args.model)
    _check_compat(m, ds)
    r = evaluate(m, ds)
    return {"accuracy": r["accuracy"], "confusion": r["confusion"].tolist()}


def _check_compat(m, ds):
    if tuple(m.input_shape) != tuple(ds.shape):
        raise ShapeMismatch(f"dataset shape {ds.shape} incompatible with model input {m.input_shape}")


def cmd_attack(args, cfg):
    ds = load_dataset(args.dataset)
    m = load_checkpoint(args.model)
    _check_compat(m, ds)
    p_x = H.ref_power(ds)
    psr_db = args.psr if args.psr is not None else float(cfg["attack"]["uap_psr_db"])
    eps = atk.eps_for_psr(p_x, psr_db)
    c = cfg.attack_config(eps, method=args.method)
    if args.method == "UAP":
        gen = H.stratified_subset(ds, int(cfg["attack"]["n_gen"]), c.seed)
        v = atk.uap(m, gen, c)
    elif args.method == "AWGN":
        v = atk.awgn_baseline(ds.shape, p_x, psr_db, c.seed)
    else:
        i = int(args.index)
        fn = atk.fgsm if args.method == "FGSM" else atk.pgd
        v = fn(m, ds.x[i], ds.y[i], c)
    out = _out_dir(args, cfg, f"attack-{args.method}")
    atk.save_perturbation(v, out, {**_stamp(cfg), "p_x": p_x, "psr_db": atk.psr(v, p_x)})
    return {"out": str(out), "psr_db": atk.psr(v, p_x), "norm": v.norm()}


def cmd_scenario(args, cfg):
    lab = _lab(cfg, args)
    victim, sur = _ref(args.victim), _ref(args.surrogate or args.victim)
    c = cfg.attack_config(atk.eps_for_psr(1.0, float(cfg["attack"]["uap_psr_db"])), method=args.method)
    s = H.ThreatScenario(args.kind, victim, sur, c, tuple(_sweep(cfg)))
    rep = H.run_scenario(lab, s, int(cfg["scenario"]["n_eval"]), int(cfg["attack"]["n_gen"]))
    rep.meta.update(_stamp(cfg))
    out = _out_dir(args, cfg, f"scenario-{args.kind}-{args.method}")
    _write_json(out / "report.json", rep)
    H.report_to_csv(rep.to_dict(), out / "curve.csv")
    return {"out": str(out), "sr": rep.curve()}


def cmd_matrix(args, cfg):
    lab = _lab(cfg, args)
    out = _out_dir(args, cfg, f"matrix-{args.type}")
    top = max(cfg["scenario"]["targeted_psr_sweep"] if args.type == "targeted" else _sweep(cfg))
    psr_db = args.psr if args.psr is not None else float(top)
    n_eval = int(cfg["scenario"]["n_eval"])
    if args.type == "targeted":
        v = _ref(args.victim)
        c = cfg.attack_config(1.0, method="PGD", targeted=True)
        mat = H.targeted_matrix(lab, v, c, psr_db, n_eval)
        res = {"victim": v.key(), "psr_db": psr_db, "matrix": mat.tolist(),
               "off_diagonal_mean": H.off_diagonal_mean(mat), **_stamp(cfg)}
        with (out / "matrix.csv").open("w", newline="") as fh:
            csv.writer(fh).writerows([["src\\tar", *range(len(mat))]] + [[i, *r] for i, r in enumerate(mat)])
    else:
        archs = args.archs.split(",") if args.archs else list(ARCHS)
        res = H.cross_model_matrix(lab, archs, archs, _uap_cfg(cfg), psr_db, args.dataset_id,
                                   int(cfg["attack"]["n_gen"]), n_eval)
        res.update(_stamp(cfg))
        with (out / "table.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["surrogate\\victim", *archs])
            for a, row in zip(archs, res["sr"]):
                w.writerow([a, *row])
    _write_json(out / "report.json", res)
    return {"out": str(out)}


def cmd_crossday(args, cfg):
    lab = _lab(cfg, args)
    v = _ref(args.victim)
    sur = _ref(args.surrogate) if args.surrogate else v
    uap = lab.universal(sur, _uap_cfg(cfg), int(cfg["attack"]["n_gen"]))
    res = H.cross_day(lab, uap, v, _sweep(cfg), n_eval=int(cfg["scenario"]["n_eval"]))
    res.update(_stamp(cfg))
    out = _out_dir(args, cfg, "crossday")
    _write_json(out / "report.json", res)
    with (out / "crossday.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "psr_db", "sr", "sr_awgn"])
        for d, row, rn in zip(res["days"], res["sr"], res["sr_awgn"]):
            for q, s, sn in zip(res["psr_db"], row, rn):
                w.writerow([d, q, s, sn])
    return {"out": str(out), "sr_std": res["sr_std"]}


def cmd_crossdevice(args, cfg):
    lab = _lab(cfg, args)
    seeds = tuple(range(int(cfg["scenario"]["crossdevice_seeds"])))
    res = {"modes": {}, **_stamp(cfg)}
    for mode in H.CROSS_DEVICE_MODES:
        rep = H.cross_device(lab, mode, _uap_cfg(cfg), _sweep(cfg), args.arch, seeds, int(cfg["attack"]["n_gen"]),
                             int(cfg["scenario"]["n_eval"]))
        res["modes"][mode] = rep.to_dict()
    out = _out_dir(args, cfg, "crossdevice")
    _write_json(out / "report.json", res)
    with (out / "crossdevice.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["psr_db", *H.CROSS_DEVICE_MODES, "sr_awgn"])
        pts = [res["modes"][m]["points"] for m in H.CROSS_DEVICE_MODES]
        for i, q in enumerate(_sweep(cfg)):
            w.writerow([q, *[p[i]["sr"] for p in pts], pts[-1][i]["sr_awgn"]])
    return {"out": str(out)}


def cmd_realtime(args, cfg):
    lab = _lab(cfg, args)
    v = _ref(args.victim)
    uap = lab.universal(_ref(args.surrogate or "CNN2@G1-surrogate"), _uap_cfg(cfg), int(cfg["attack"]["n_gen"]))
    seeds = range(int(cfg["scenario"]["realtime_seeds"]))
    sweep = _sweep(cfg)
    res = {"psr_db": sweep, "modes": {}, **_stamp(cfg)}
    for mode in ("whole", "sync", "unsync"):
        runs = [H.realtime_attack(lab, uap, v, mode, sweep, seed=s, n_eval=int(cfg["scenario"]["n_eval"]))
                for s in seeds]
        res["modes"][mode] = np.mean([r.curve() for r in runs], axis=0).tolist()
    out = _out_dir(args, cfg, "realtime")
    _write_json(out / "report.json", res)
    with (out / "realtime.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["psr_db", "sr_whole", "sr_sync", "sr_unsync"])
        for i, q in enumerate(sweep):
            w.writerow([q, *[res["modes"][m][i] for m in ("whole", "sync", "unsync")]])
    return {"out": str(out)}


def cmd_practical(args, cfg):
    lab = _lab(cfg, args)
    res = H.practical_suite(lab, _uap_cfg(cfg), _sweep(cfg), n_gen=int(cfg["attack"]["n_gen"]),
                            n_eval=int(cfg["scenario"]["n_eval"]))
    res.update(_stamp(cfg))
    out = _out_dir(args, cfg, "practical")
    _write_json(out / "report.json", res)
    with (out / "practical.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["surrogate", "victim", "day", "psr_db", "sr", "sr_awgn"])
        for c in res["curves"]:
            for pt in c["points"]:
                w.writerow([c["surrogate"], c["victim"], c["day"], pt["psr_db"], pt["sr"], pt["sr_awgn"]])
    return {"out": str(out)}


def cmd_psr_sweep(args, cfg):
    """FGSM, PGD and AWGN white-box curves per victim arch."""
    lab = _lab(cfg, args)
    sweep = _sweep(cfg)
    n_eval = int(cfg["scenario"]["n_eval"])
    out = _out_dir(args, cfg, "psr-sweep")
    res = {"psr_db": sweep, "victims": {}, **_stamp(cfg)}
    for arch in args.archs.split(","):
        v = H.ModelRef(arch, "G1-victim")
        curves = {}
        for method in ("FGSM", "PGD"):
            s = H.ThreatScenario("WB", v, v, cfg.attack_config(1.0, method=method), tuple(sweep))
            curves[method] = H.run_scenario(lab, s, n_eval).to_dict()
        res["victims"][arch] = curves
        with (out / f"psr_sweep_{arch}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["psr_db", "sr_fgsm", "sr_pgd", "sr_awgn"])
            for i, q in enumerate(sweep):
                w.writerow([q, curves["FGSM"]["points"][i]["sr"], curves["PGD"]["points"][i]["sr"],
                            curves["PGD"]["points"][i]["sr_awgn"]])
    _write_json(out / "report.json", res)
    return {"out": str(out)}


def cmd_reproduce(args, cfg):
    name = args.name
    if name not in FIGURES:
        raise InvalidParams(f"unknown figure {name!r}; choose from {FIGURES}")
    ns = argparse.Namespace(**vars(args))
    ns.victim = getattr(args, "victim", None) or "CNN1@G1-victim"
    ns.surrogate = None
    ns.psr = None
    if name == "psr-sweep":
        ns.archs = args.archs or "CNN1,LSTM1,GRU1"
        return cmd_psr_sweep(ns, cfg)
    if name == "targeted-matrix":
        ns.type = "targeted"
        return cmd_matrix(ns, cfg)
    if name == "crossmodel-table":
        ns.type, ns.archs, ns.dataset_id = "cross-model", args.archs, "G1-victim"
        return cmd_matrix(ns, cfg)
    if name == "crossday":
        return cmd_crossday(ns, cfg)
    if name == "crossdevice":
        ns.arch = "CNN1"
        return cmd_crossdevice(ns, cfg)
    if name == "realtime":
        return cmd_realtime(ns, cfg)
    return cmd_practical(ns, cfg)


def cmd_report(args, cfg):
    rep = json.loads(Path(args.report).read_text())
    out = Path(args.csv) if args.csv else Path(args.report).with_suffix(".csv")
    if out.exists():
        raise InvalidParams(f"{out} already exists; outputs are never overwritten")
    H.report_to_csv(rep, out)
    return {"out": str(out), "rows": len(rep["points"])}


def verify_artifacts(root) -> dict:
    """Walk ``root`` and check every dataset, checkpoint, perturbation and report."""
    root = Path(root)
    if not root.exists():
        raise MissingArtifact(f"{root} does not exist")
    records = []
    shapes = {}
    for man in sorted(root.rglob("manifest.json")):
        d = man.parent
        rec = {"path": str(d), "type": "dataset", "ok": True}
        try:
            m = json.loads(man.read_text())
            if (d / "x.f32").exists():
                ds = load_dataset(d)
                shapes[str(d)] = ds.shape
            elif (d / "iq.c64").exists():
                rec["type"] = "raw"
                load_raw(d)
        except Exception as e:  # noqa: BLE001 - each failure becomes a record
            rec.update(ok=False, error=f"{type(e).__name__}: {e}")
        records.append(rec)
    for arch in sorted(root.rglob("arch.json")):
        d = arch.parent
        rec = {"path": str(d), "type": "checkpoint", "ok": True}
        try:
            meta = verify_checkpoint(d)
            shapes[str(d)] = tuple(meta["input_shape"])
        except Exception as e:  # noqa: BLE001
            rec.update(ok=False, error=f"{type(e).__name__}: {e}")
        records.append(rec)
    for vm in sorted(root.rglob("vmeta.json")):
        d = vm.parent
        rec = {"path": str(d), "type": "perturbation", "ok": True}
        try:
            atk.load_perturbation(d)
        except Exception as e:  # noqa: BLE001
            rec.update(ok=False, error=f"{type(e).__name__}: {e}")
        records.append(rec)
    for rj in sorted(root.rglob("report.json")):
        rec = {"path": str(rj), "type": "report", "ok": True}
        try:
            json.loads(rj.read_text())
        except Exception as e:  # noqa: BLE001
            rec.update(ok=False, error=f"{type(e).__name__}: {e}")
        records.append(rec)
    ds_shapes = {p: s for p, s in shapes.items() if not (Path(p) / "arch.json").exists()}
    ck_shapes = {p: s for p, s in shapes.items() if (Path(p) / "arch.json").exists()}
    if ds_shapes and ck_shapes:
        known = set(ds_shapes.values())
        for p, s in ck_shapes.items():
            if s not in known:
                records.append({"path": p, "type": "compatibility", "ok": False,
                                "error": f"checkpoint input {list(s)} matches no dataset shape "
                                         f"{sorted(list(k) for k in known)}"})
    return {"root": str(root), "ok": all(r["ok"] for r in records), "records": records}


def cmd_verify(args, cfg):
    rep = verify_artifacts(args.dir)
    print(json.dumps(rep, indent=1, sort_keys=True))
    if not rep["ok"]:
        bad = [r for r in rep["records"] if not r["ok"]]
        exc = ChecksumMismatch if any("Checksum" in r.get("error", "") for r in bad) else VerificationFailure
        raise exc("; ".join(f"{r['path']}: {r['error']}" for r in bad))
    return None


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rfadv", description="Adversarial attacks on deep-learning RF fingerprinting (LoRa).")
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted-path override, e.g. --set train.lr=1e-4 (repeatable)")
    ap.add_argument("--workers", type=int, default=1, help="cap on parallel workers")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize raw LoRa preamble packets")
    p.add_argument("--group", default="G1")
    p.add_argument("--days", help="comma-separated day indices")
    p.add_argument("--packets", type=int, help="packets per device per day")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="raw packets -> channel-independent spectrograms")
    p.add_argument("--raw", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=ARCHS, default="CNN1")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="clean accuracy and confusion matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("attack", help="generate a single perturbation")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=atk.METHODS, default="UAP")
    p.add_argument("--psr", type=float, help="target PSR in dB")
    p.add_argument("--index", type=int, default=0, help="example index for FGSM/PGD")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("scenario", help="run a WB/GB1/GB2/BB threat scenario")
    p.add_argument("--kind", choices=H.KINDS, default="WB")
    p.add_argument("--victim", default="CNN1@G1-victim")
    p.add_argument("--surrogate")
    p.add_argument("--method", choices=atk.METHODS, default="UAP")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("matrix", help="targeted matrix or cross-model SR table")
    p.add_argument("--type", choices=("targeted", "cross-model"), default="cross-model")
    p.add_argument("--victim", default="CNN1@G1-victim")
    p.add_argument("--archs", help="comma-separated architectures (cross-model)")
    p.add_argument("--dataset-id", default="G1-victim")
    p.add_argument("--psr", type=float)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_matrix)

    p = sub.add_parser("crossday", help="one UAP across synthetic days")
    p.add_argument("--victim", default="CNN1@G1-victim")
    p.add_argument("--surrogate")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_crossday)

    p = sub.add_parser("crossdevice", help="same-device / diff-device / diff-device-and-net")
    p.add_argument("--arch", default="CNN1")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_crossdevice)

    p = sub.add_parser("realtime", help="whole / sync / unsync UAP injection")
    p.add_argument("--victim", default="CNN1@G1-victim")
    p.add_argument("--surrogate", default="CNN2@G1-surrogate")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_realtime)

    p = sub.add_parser("practical", help="Group-1 surrogates against Group-2 victims")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_practical)

    p = sub.add_parser("report", help="scenario JSON -> CSV")
    p.add_argument("report")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="check manifests, checksums and shapes under a directory")
    p.add_argument("dir")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("reproduce", help="rebuild the data behind one figure or table")
    p.add_argument("name", choices=FIGURES)
    p.add_argument("--archs")
    p.add_argument("--victim")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, args.set)
        res = args.fn(args, cfg)
        if res is not None:
            print(json.dumps(H._sanitize(res), sort_keys=True))
        return 0
    except RfadvError as e:
        _emit_error(e)
        return e.exit_code
    except (FileNotFoundError,) as e:
        _emit_error(MissingArtifact(str(e)))
        return 3
    except (json.JSONDecodeError, zlib.error) as e:
        _emit_error(VerificationFailure(str(e)))
        return 5


if __name__ == "__main__":
    sys.exit(main())
