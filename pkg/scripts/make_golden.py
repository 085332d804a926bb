"""Regenerate tests/golden (only when the wire format changes on purpose)."""

import hashlib
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from dualrcc.pipeline import decode, encode  # noqa: E402
from dualrcc.toy import make_toy_model  # noqa: E402
from test_pipeline import GOLDEN, GOLDEN_CFG, _golden_input  # noqa: E402


def main():
    toy = make_toy_model()
    x, cond = _golden_input(toy)
    data, _ = encode(x, cond, GOLDEN_CFG, toy)
    GOLDEN.mkdir(exist_ok=True)
    (GOLDEN / "toy_te24.drc").write_bytes(data)
    x_hat, _ = decode(data, toy)
    digest = hashlib.sha256(x_hat.astype("<f8").tobytes()).hexdigest()
    (GOLDEN / "toy_te24.sha256").write_text(f"{digest}  decoded pixels, little-endian float64\n")
    print(f"wrote {len(data)} bytes, decode sha256 {digest}")


if __name__ == "__main__":
    main()
