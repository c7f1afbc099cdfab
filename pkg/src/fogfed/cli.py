"""Command-line front end: ``fogfed simulate | gen-data | eval``.

Exit codes: 0 ok, 2 configuration, 3 data or file I/O, 4 runtime or protocol.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import fed_protocol as proto
from .data_stream import Dataset, load, save_raw, synth_generate, _atomic_write_bytes
from .errors import ConfigError, DataParseError, FogFedError, InvalidArgumentError, ProtocolError
from .nn_core import HyperParams, evaluate
from .topology import RoundReport, Simulation, TopologyConfig, build

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
DEFAULT_SYNTH = (16000, 0.05)
SEED_ENV = "FOGFED_SEED"


class DataError(Exception):
    """Input data or output files could not be read or written."""


@dataclass
class RunConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    train_path: str | None = None
    test_path: str | None = None
    synth: tuple[int, float] | None = None
    output_dir: str = "out"
    emit: str = "csv"
    log_transport: bool = False


def _parse_synth(text: str) -> tuple[int, float]:
    try:
        n, sigma = text.split(",")
        return int(n), float(sigma)
    except ValueError:
        raise ConfigError(f"synth spec must be N,SIGMA, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_KEYS = {
    "fogs": int,
    "rounds": int,
    "window": int,
    "epochs": int,
    "lr": float,
    "batch": int,
    "seed": int,
    "workers": int,
    "train": str,
    "test": str,
    "synth": _parse_synth,
    "out": str,
    "emit": str,
    "log_transport": _parse_bool,
}


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment. Keys match the long flag names."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Merge defaults, the config file and flags (flags win). Seed falls back to $FOGFED_SEED."""
    values = read_config_file(args.config) if args.config else {}
    for key in _KEYS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    if "seed" not in values and environ.get(SEED_ENV):
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None

    has_files = "train" in values or "test" in values
    if has_files and "synth" in values:
        raise ConfigError("give either --train/--test or --synth, not both")
    if has_files and not ("train" in values and "test" in values):
        raise ConfigError("--train and --test must be given together")
    emit = values.get("emit", "csv")
    if emit not in ("csv", "json", "both"):
        raise ConfigError(f"--emit must be csv, json or both, got {emit!r}")
    try:
        defaults = HyperParams()
        hyper = HyperParams(
            learning_rate=values.get("lr", defaults.learning_rate),
            local_epochs=values.get("epochs", defaults.local_epochs),
            batch_size=values.get("batch", defaults.batch_size),
        )
        topology = TopologyConfig(
            num_fogs=values.get("fogs", 5),
            rounds=values.get("rounds", 53),
            window_size=values.get("window", 60),
            hyper=hyper,
            seed=values.get("seed", 0),
            workers=values.get("workers", 1),
        )
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    synth = values.get("synth")
    if not has_files and synth is None:
        synth = DEFAULT_SYNTH
    if synth is not None and (synth[0] < 1 or synth[1] < 0):
        raise ConfigError("synth needs N >= 1 and SIGMA >= 0")
    return RunConfig(
        topology=topology,
        train_path=values.get("train"),
        test_path=values.get("test"),
        synth=synth,
        output_dir=values.get("out", "out"),
        emit=emit,
        log_transport=values.get("log_transport", False),
    )


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Training and test sets. Synthetic test sets hold N // 10 frames drawn with seed + 1."""
    if cfg.synth is not None:
        n, sigma = cfg.synth
        seed = cfg.topology.seed
        return synth_generate(n, seed, sigma), synth_generate(max(1, n // 10), seed + 1, sigma)
    try:
        return load(cfg.train_path), load(cfg.test_path)
    except (OSError, DataParseError) as exc:
        raise DataError(str(exc)) from None


# --- output -----------------------------------------------------------------


def metrics_header(num_fogs: int) -> list[str]:
    return ["round", "global_test_loss", "global_test_accuracy"] + [f"fog_{i}" for i in range(num_fogs)]


def metrics_csv(reports: list[RoundReport], num_fogs: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(metrics_header(num_fogs))
    for r in reports:
        writer.writerow(
            [r.round_id, f"{r.global_test_loss:.6g}", f"{r.global_test_accuracy:.6g}"]
            + [f"{a:.6g}" for a in r.per_fog_local_accuracy]
        )
    return buf.getvalue()


def metrics_json(reports: list[RoundReport], cfg: RunConfig) -> str:
    t = cfg.topology
    doc = {
        "config": {
            "num_fogs": t.num_fogs,
            "rounds": t.rounds,
            "window_size": t.window_size,
            "local_epochs": t.hyper.local_epochs,
            "learning_rate": t.hyper.learning_rate,
            "batch_size": t.hyper.batch_size,
            "seed": t.seed,
        },
        "rounds": [
            {
                "round": r.round_id,
                "global_test_loss": r.global_test_loss,
                "global_test_accuracy": r.global_test_accuracy,
                "per_fog_local_accuracy": r.per_fog_local_accuracy,
                "per_fog_local_loss": r.per_fog_local_loss,
                "fog_train_loss": r.fog_train_loss,
            }
            for r in reports
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def transport_log_csv(sim: Simulation) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sender", "receiver", "msg_type", "byte_len", "round_id"])
    for rec in sim.transport.log:
        writer.writerow([rec.sender, rec.receiver, rec.msg_type, rec.byte_len, rec.round_id])
    return buf.getvalue()


def _write(path: Path, text: str | bytes) -> None:
    try:
        _atomic_write_bytes(path, text.encode() if isinstance(text, str) else text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


# --- commands ---------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    started = time.perf_counter()
    train, test = load_datasets(cfg)
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None
    sim = build(cfg.topology, train, test, log_transport=cfg.log_transport)
    reports = sim.run()

    k = cfg.topology.num_fogs
    if cfg.emit in ("csv", "both"):
        _write(out / "metrics.csv", metrics_csv(reports, k))
    if cfg.emit in ("json", "both"):
        _write(out / "metrics.json", metrics_json(reports, cfg))
    _write(out / "model.ffl", proto.encode(sim.cloud.global_model))
    if cfg.log_transport:
        _write(out / "transport_log.csv", transport_log_csv(sim))

    final = reports[-1].global_test_accuracy if reports else float("nan")
    elapsed = time.perf_counter() - started
    print(f"final_accuracy={final:.4f} rounds={len(reports)} wall_time={elapsed:.2f}s out={out}")
    return EXIT_OK


def cmd_gen_data(n: int, seed: int, sigma: float, out_path: str) -> int:
    try:
        data = synth_generate(n, seed, sigma)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    try:
        save_raw(data, out_path)
    except OSError as exc:
        raise DataError(f"cannot write {out_path}: {exc}") from None
    print(f"wrote {n} frames to {out_path}")
    return EXIT_OK


def cmd_eval(model_path: str, data_path: str, data_format: str | None = None) -> int:
    try:
        frame = Path(model_path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {model_path}: {exc}") from None
    msg = proto.decode(frame)
    if not isinstance(msg, proto.GlobalModel):
        raise ProtocolError(f"{model_path} holds a {type(msg).__name__}, expected GlobalModel")
    try:
        data = load(data_path, data_format)
    except (OSError, DataParseError) as exc:
        raise DataError(str(exc)) from None
    if len(data) == 0:
        raise DataError(f"{data_path} holds no frames")
    loss, accuracy = evaluate(msg.params, data)
    print(json.dumps({"loss": loss, "accuracy": accuracy, "frames": len(data), "round_id": msg.round_id}))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: config error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fogfed", description="Fog/cloud federated online-training simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run the federated round loop and write metrics")
    sim.add_argument("--config", metavar="PATH", help="key=value config file; flags override it")
    sim.add_argument("--fogs", type=int)
    sim.add_argument("--rounds", type=int)
    sim.add_argument("--window", type=int)
    sim.add_argument("--epochs", type=int)
    sim.add_argument("--lr", type=float)
    sim.add_argument("--batch", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--workers", type=int, help="threads for per-fog training (results do not depend on it)")
    sim.add_argument("--train", metavar="PATH")
    sim.add_argument("--test", metavar="PATH")
    sim.add_argument("--synth", metavar="N,SIGMA", type=_synth_arg)
    sim.add_argument("--out", metavar="DIR")
    sim.add_argument("--emit", choices=["csv", "json", "both"])
    sim.add_argument("--log-transport", action="store_true", dest="log_transport")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset in raw-f32 format")
    gen.add_argument("--n", type=int, default=None)
    gen.add_argument("--sigma", type=float, default=None)
    gen.add_argument("--synth", metavar="N,SIGMA", type=_synth_arg)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", metavar="PATH", required=True)

    ev = sub.add_parser("eval", help="evaluate a saved GlobalModel frame on a dataset")
    ev.add_argument("--model", metavar="PATH", required=True)
    ev.add_argument("--data", metavar="PATH", required=True)
    ev.add_argument("--format", choices=["csv", "raw-f32"], default=None)
    return parser


def _synth_arg(text: str) -> tuple[int, float]:
    try:
        return _parse_synth(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        return cmd_simulate(resolve_config(args))
    if args.command == "gen-data":
        n, sigma = args.synth or (8000, 0.05)
        n = args.n if args.n is not None else n
        sigma = args.sigma if args.sigma is not None else sigma
        seed = args.seed
        if seed is None:
            try:
                seed = int(os.environ.get(SEED_ENV, "0"))
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer") from None
        return cmd_gen_data(n, seed, sigma, args.out)
    return cmd_eval(args.model, args.data, args.format)


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"fogfed: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"fogfed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProtocolError as exc:
        print(f"fogfed: framing error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FogFedError as exc:
        print(f"fogfed: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
