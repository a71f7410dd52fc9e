"""Command line entry point: ``mirage-lab {collect,analyze,selftest,figures}``.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 invariant failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, SeedMode
from .leakage_analysis import (BinMode, Counting, ge_curve, heatmap, heatmap_correlation,
                               load_files, profile_templates, timing_histogram,
                               group_by_plaintext, write_ge_csv, write_heatmap_csv,
                               write_histogram_csv)
from .mirage import ConfigError
from .occupancy_attack import ParseError, collect_dataset, key_from_hex, verify_records
from .prng import EntropyUnavailable, seed_fixed

log = logging.getLogger("mirage_lab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
OUT_ENV = "MIRAGE_LAB_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mirage-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_flags(sp):
        sp.add_argument("--config", help="JSON config file; flags override its fields")
        sp.add_argument("--seed-mode", help="fixed[:N] or random")
        sp.add_argument("--l1", type=int, dest="l1_size", help="L1 size in bytes (512 or 65536)")
        sp.add_argument("--lines", type=int, dest="data_lines", help="LLC data lines C")
        sp.add_argument("--index-seed", type=int)
        sp.add_argument("--plaintext-seed", type=int)
        sp.add_argument("--bin-mode", choices=["xor", "sbox"])
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or config)")

    c = sub.add_parser("collect", help="collect a trace dataset")
    config_flags(c)
    c.add_argument("--n", type=_positive, dest="n_traces")
    c.add_argument("--split", type=_positive)
    c.add_argument("--role", choices=["victim", "profile"], default="victim",
                   help="which configured key encrypts")
    c.add_argument("--key", help="AES key as 32 hex chars, overrides --role")
    c.add_argument("--prefix", help="file name prefix (default <role>)")
    c.add_argument("--jobs", type=_positive, default=1)

    a = sub.add_parser("analyze", help="analyze trace files")
    asub = a.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    ge = asub.add_parser("ge", help="guessing entropy curve")
    hm = asub.add_parser("heatmap", help="profiled and victim heatmaps")
    for sp in (ge, hm):
        config_flags(sp)
        sp.add_argument("--profile", nargs="+", required=True, help="profiling trace files")
        sp.add_argument("--victim", nargs="+", required=True, help="victim trace files, in order")
    ge.add_argument("--counting", choices=[c.value for c in Counting], default="global")
    ge.add_argument("--max-traces", type=_positive)
    ge.add_argument("--step", type=_positive)
    hs = asub.add_parser("histogram", help="probe-cycle histograms grouped by plaintext")
    config_flags(hs)
    hs.add_argument("--input", nargs="+", required=True)
    hs.add_argument("--bins", type=_positive, default=64)

    s = sub.add_parser("selftest", help="fast invariant suite")
    s.add_argument("--inject-corruption", action="store_true",
                   help="corrupt one reverse pointer before the integrity check")

    f = sub.add_parser("figures", help="desk-scale figure data (timing, heatmaps, GE)")
    config_flags(f)
    f.add_argument("--n", type=_positive, dest="n_traces", help="traces per dataset")
    f.add_argument("--reps", type=_positive, default=100)
    f.add_argument("--step", type=_positive, default=250)
    f.add_argument("--jobs", type=_positive, default=1)
    return p


def effective_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    for name in ("l1_size", "index_seed", "plaintext_seed", "bin_mode", "n_traces", "split"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "seed_mode", None):
        changes["seed_mode"] = SeedMode.parse(args.seed_mode)
    if getattr(args, "data_lines", None):
        changes["mirage"] = dataclasses.replace(cfg.mirage, data_lines=args.data_lines)
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV)
    if out:
        changes["out_dir"] = out
    cfg = cfg.replace(**changes)
    cfg.mirage.validate()
    cfg.l1.validate()
    return cfg


def _meta(cfg: ExperimentConfig, extra: str = "", sources=()) -> str:
    """Header text: analysis parameters, the effective config and each input's own config."""
    src = " ".join(f"source={h.get('config', '{}')}" for h in sources)
    return f"{extra} config={cfg.to_json()} {src}".strip()


def cmd_collect(args) -> int:
    cfg = effective_config(args)
    key_hex = args.key or (cfg.profile_key if args.role == "profile" else cfg.victim_key)
    key = key_from_hex(key_hex)
    if cfg.split > cfg.n_traces:
        raise UsageError(f"--split {cfg.split} exceeds --n {cfg.n_traces}")
    out = Path(cfg.out_dir)
    prefix = args.prefix or args.role
    _, paths = collect_dataset(cfg, key, cfg.n_traces, cfg.seed_mode, seed_fixed(cfg.plaintext_seed),
                               out, cfg.split, prefix, args.jobs)
    echo = out / f"{prefix}.config.json"
    echo.write_text(json.dumps({**cfg.to_dict(), "key": key_hex}, indent=2, sort_keys=True) + "\n")
    for p in paths:
        print(p)
    return EXIT_OK


def _key_of(headers, paths, what):
    try:
        return key_from_hex(headers[0]["key"])
    except (KeyError, ValueError) as exc:
        raise ParseError(paths[0], 1, f"{what} header lacks a valid key") from exc


def _load_checked(paths, what):
    headers, files = load_files(paths)
    key = _key_of(headers, paths, what)
    for path, recs in zip(paths, files):
        bad = verify_records(key, recs)
        if bad:
            raise ParseError(path, bad[0] + 2, "ciphertext does not match AES(key, plaintext)")
    return headers, files, key


def cmd_analyze(args) -> int:
    cfg = effective_config(args)
    mode = BinMode.parse(cfg.bin_mode)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.analysis == "histogram":
        headers, files = load_files(args.input)
        hist = timing_histogram(group_by_plaintext([r for f in files for r in f]), args.bins)
        write_histogram_csv(out / "histogram.csv", hist,
                            _meta(cfg, f"inputs={','.join(args.input)} bins={args.bins}", headers[:1]))
        print(out / "histogram.csv")
        return EXIT_OK

    pheaders, pfiles, pkey = _load_checked(args.profile, "profile")
    templates = profile_templates([r for f in pfiles for r in f], pkey, mode)
    if args.analysis == "heatmap":
        vheaders, vfiles, vkey = _load_checked(args.victim, "victim")
        hp = heatmap(templates)
        hv = heatmap(profile_templates([r for f in vfiles for r in f], vkey, mode))
        r = heatmap_correlation(hp, hv)
        meta = _meta(cfg, f"bin_mode={mode.value} pearson={r:.4f}", pheaders[:1] + vheaders[:1])
        write_heatmap_csv(out / "heatmap_profiled.csv", hp, f"profiled {meta}")
        write_heatmap_csv(out / "heatmap_victim.csv", hv, f"victim {meta}")
        print(out / "heatmap_profiled.csv")
        print(out / "heatmap_victim.csv")
        print(f"pearson={r:.4f}")
        return EXIT_OK

    vheaders, vfiles, vkey = _load_checked(args.victim, "victim")
    max_traces = args.max_traces or sum(len(f) for f in vfiles)
    curve = ge_curve(templates, vfiles, max_traces, Counting(args.counting), vkey, mode, args.step)
    name = f"ge_{args.counting}.csv"
    write_ge_csv(out / name, curve,
                 _meta(cfg, f"counting={args.counting} max_traces={max_traces} bin_mode={mode.value}",
                       pheaders[:1] + vheaders[:1]))
    print("traces_used,ge_bits,ge_percent")
    for used, rep in curve:
        print(f"{used},{rep.ge_bits:.4f},{rep.ge_percent:.4f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    report = run_selftest(inject_corruption=args.inject_corruption)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_INVARIANT


def cmd_figures(args) -> int:
    from . import experiments as ex
    from .config import FIXED_BUG, RANDOM_FIX

    cfg = effective_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = BinMode.parse(cfg.bin_mode)
    n = cfg.n_traces
    key = key_from_hex(cfg.victim_key)
    pts = ex.sample_plaintexts(4, cfg.plaintext_seed)
    for sm in (FIXED_BUG, RANDOM_FIX):
        groups = ex.repeat_groups(cfg, key, pts, args.reps, sm)
        tag = sm.tag.replace(":", "")
        write_histogram_csv(out / f"fig3_histogram_{tag}.csv", timing_histogram(groups),
                            _meta(cfg.replace(seed_mode=sm), f"reps={args.reps}"))
    for l1 in (512, 65536):
        for sm in (FIXED_BUG, RANDOM_FIX):
            c = cfg.replace(l1_size=l1, seed_mode=sm)
            data = ex.collect_pair(c, sm, n, n, out / "traces", args.jobs)
            tag = f"{sm.tag.replace(':', '')}_l1{l1}"
            hp, hv, r = ex.heatmap_pair(data, mode)
            meta = _meta(c, f"pearson={r:.4f}")
            write_heatmap_csv(out / f"fig2_heatmap_profiled_{tag}.csv", hp, meta)
            write_heatmap_csv(out / f"fig2_heatmap_victim_{tag}.csv", hv, meta)
            write_ge_csv(out / f"fig1_ge_{tag}.csv", ex.ge_series(data, args.step, mode), meta)
            print(f"{tag}: heatmap pearson={r:.4f}")
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "analyze": cmd_analyze, "selftest": cmd_selftest,
            "figures": cmd_figures}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"mirage-lab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EntropyUnavailable as exc:
        print(f"mirage-lab: entropy unavailable: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, OSError) as exc:
        print(f"mirage-lab: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mirage-lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
