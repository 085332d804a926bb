"""Command-line interface: ``dualrcc encode|decode|inspect|bench``.

Exit codes: 0 ok, 2 I/O error, 3 configuration error, 4 codec error.
Standard output is line-oriented ``key=value`` (lines starting with ``#``
are comments); bench tables are tab-separated with a header row.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import bench
from . import bitstream as bsm
from .bitstream import BitstreamError, CodecError
from .config import (ConfigError, RunConfig, load_config_file, load_tags, load_vocab, read_grid,
                     write_grid)
from .diffusion import Condition
from .explicit import tag_decode
from .pipeline import decode, encode, parse_stream

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_CODEC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_CONFIG)


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--te", type=int, dest="T_E", help="number of RCC-coded diffusion states")
    p.add_argument("--tau", type=float)
    p.add_argument("--tile", type=int, dest="tile_size")
    p.add_argument("--overlap", type=int)
    p.add_argument("--skip-threshold", type=float, dest="skip_threshold_bits")
    p.add_argument("--vocab", help="vocabulary file, one entry per line")
    p.add_argument("--tags", help="tag file, one entry per line with optional region")


def build_parser():
    ap = _Parser(prog="dualrcc", description="Dual-branch diffusion codec with reverse-channel coding.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    p = sub.add_parser("encode", help="compress a grid (PGM P5 or raw float64)")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p = sub.add_parser("decode", help="reconstruct a grid from a stream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p = sub.add_parser("inspect", help="header fields and per-section bit counts")
    p.add_argument("input")
    _common(p)
    p = sub.add_parser("bench", help="run a benchmark suite: " + ", ".join(bench.SUITES))
    p.add_argument("suite")
    p.add_argument("--samples", type=int, help="samples (or PFR trials) per point")
    p.add_argument("--out", help="write the table here instead of standard output")
    p.add_argument("--plot", help="also render a plot (needs matplotlib)")
    _common(p)
    return ap


OVERRIDE_KEYS = ("seed", "threads", "T_E", "tau", "tile_size", "overlap", "skip_threshold_bits", "vocab", "tags")


def resolve(args) -> RunConfig:
    entries = load_config_file(args.config) if args.config else {}
    return RunConfig.resolve(entries, {k: getattr(args, k, None) for k in OVERRIDE_KEYS})


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", EXIT_IO) from e


def _write(path, fn):
    try:
        fn(path)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e.strerror}", EXIT_IO) from e


def cmd_encode(args, out) -> int:
    rc = resolve(args)
    model = rc.build_model()
    cond = load_tags(rc.tags, model.vocab) if rc.tags else Condition()
    try:
        grid = read_grid(args.input)
    except OSError as e:
        raise CliError(f"cannot read {args.input}: {e.strerror}", EXIT_IO) from e
    except ValueError as e:
        raise CliError(f"{args.input}: {e}", EXIT_IO) from e
    if grid.size != model.autoencoder.pixels:
        raise CliError(f"{args.input}: {grid.size} values, the model expects {model.autoencoder.pixels}", EXIT_IO)
    try:
        data, rep = encode(grid.reshape(-1), cond, rc.pipeline, model)
    except ValueError as e:
        raise CliError(str(e), EXIT_CONFIG) from e
    _write(args.output, lambda p: Path(p).write_bytes(data))
    out.write(rc.echo())
    out.write(f"cells={model.cells}\n")
    out.write(rep.to_kv(model.cells))
    out.write(f"file_bits={8 * len(data)}\n")
    return EXIT_OK


def _output_shape(pixels: int):
    r = math.isqrt(pixels)
    return (r, r) if r * r == pixels else (1, pixels)


def cmd_decode(args, out) -> int:
    rc = resolve(args)
    model = rc.build_model()
    data = _read_bytes(args.input)
    x_hat, rep = decode(data, model, rc.pipeline.threads)
    _write(args.output, lambda p: write_grid(p, x_hat.reshape(_output_shape(x_hat.size))))
    out.write(rep.to_kv())
    return EXIT_OK


def inspect_stream(data: bytes, vocab=None) -> str:
    """key=value breakdown; raises BitstreamError on malformed input."""
    header, sections = parse_stream(data)
    lines = [f"# {len(data)} bytes, {len(sections)} sections after a {header.nbytes}-byte header"]
    kv = {"file_bits": 8 * len(data), "magic": bsm.MAGIC.decode(), "version": header.version,
          "schedule_id": header.schedule_id, "T": header.T, "T_E": header.T_E, "T_D": header.T - header.T_E,
          "skipped_states": ",".join(str(t) for t in range(1, header.T + 1) if header.skip[t - 1]),
          "tau": header.tau, "seed": header.seed, "tile_size": header.tile_size, "overlap": header.overlap,
          "tag_cap": header.tag_cap, "sigma_fraction": header.sigma_fraction,
          "vocab_hash": f"{header.vocab_hash:016x}", "model_hash": f"{header.model_hash:016x}",
          "shape": f"{header.shape[0]},{header.shape[1]}", "kl_target_bits": header.kl_target_bits,
          "skip_threshold_bits": header.skip_threshold_bits, "layout_bits": header.layout_bits,
          "flags": header.flags, "header_bits": 8 * header.nbytes,
          "rcc_sections": sum(s.tag == bsm.SEC_RCC for s in sections)}
    total = 8 * header.nbytes
    for s in sections:
        pad = 8 * ((s.nbits + 7) // 8) - s.nbits
        kv[f"section.{s.name}.offset_bits"] = s.offset_bits
        kv[f"section.{s.name}.payload_bits"] = s.nbits
        kv[f"section.{s.name}.framing_bits"] = bsm.SECTION_OVERHEAD_BITS
        kv[f"section.{s.name}.padding_bits"] = pad
        kv[f"section.{s.name}.bits"] = s.framed_bits
        total += s.framed_bits
        lines.append(f"# {s.name:<9} payload {s.nbits:>8} bits  framed {s.framed_bits:>8} bits  (pad {pad})")
    kv["section_bits_total"] = total
    tags = next(s for s in sections if s.tag == bsm.SEC_TAGS)

    def tag_reader():
        return bsm.BitReader(tags.reader.data, tags.nbits, origin=tags.reader.origin)

    kv["tags.K"] = tag_reader().read(8)
    kv["tags.payload_bits"] = tags.nbits
    if vocab is not None and vocab.id == header.vocab_hash:
        prompt = tag_decode(tag_reader(), vocab)
        kv["tags.indices"] = ",".join(str(i) for i in prompt.indices)
        kv["tags.duplicates"] = int(prompt.has_duplicates)
        if prompt.has_duplicates:
            lines.append("# warning: tag prompt repeats an index")
    lines += [f"{k}={v}" for k, v in kv.items()]
    return "\n".join(lines) + "\n"


def cmd_inspect(args, out) -> int:
    vocab = load_vocab(args.vocab) if args.vocab else None
    if vocab is None and args.config:
        rc = resolve(args)
        vocab = rc.build_model().vocab
    out.write(inspect_stream(_read_bytes(args.input), vocab))
    return EXIT_OK


def cmd_bench(args, out) -> int:
    if args.suite not in bench.SUITES:
        raise CliError(f"unknown suite {args.suite!r}; choose from {', '.join(bench.SUITES)}", EXIT_CONFIG)
    rc = resolve(args)
    if args.samples is not None and args.samples < 2:
        raise CliError("--samples must be >= 2", EXIT_CONFIG)
    rows = bench.run_suite(args.suite, args.samples, rc.pipeline, None if args.config is None else rc.model)
    text = "".join(f"# {line}\n" for line in rc.echo().splitlines()) + bench.format_table(rows)
    if args.out:
        _write(args.out, lambda p: Path(p).write_text(text))
    else:
        out.write(text)
    if args.plot:
        x, y, g = bench.PLOT_AXES[args.suite]
        _write(args.plot, lambda p: bench.plot_table(rows, x, y, p, g))
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "inspect": cmd_inspect, "bench": cmd_bench}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.cmd](args, out)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BitstreamError as e:
        print(f"stream error: {e}", file=sys.stderr)
        return EXIT_CODEC
    except CodecError as e:
        print(f"codec error: {e}", file=sys.stderr)
        return EXIT_CODEC


if __name__ == "__main__":
    sys.exit(main())
