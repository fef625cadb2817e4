"""Doubling rates of a betting game with and without a side channel.

    python3 scripts/kelly_demo.py [--odds 6] [--flips 0 0.1 0.3 0.5] [--throws 100000]

For each symmetric channel the analytic gain in doubling rate is printed next
to the channel's mutual information and a simulated rate.
"""

import argparse

import numpy as np

from diffinfo.kelly import BettingGame, Channel, channel_rate_gain, discrete_mi, doubling_rate, joint_table, simulate_wealth


def _clean(v: float) -> float:
    # print rounding residue as 0 rather than -0.0000
    return 0.0 if abs(v) < 1e-12 else v


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--outcomes", type=int, default=6)
    ap.add_argument("--odds", type=float, default=6.0)
    ap.add_argument("--flips", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5, 5 / 6])
    ap.add_argument("--throws", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    game = BettingGame(args.outcomes, args.odds)
    base = doubling_rate(game, game.p_true)
    sim = simulate_wealth(game, None, args.throws, args.seed).rate
    print(f"no channel: analytic {base:.4f}  simulated {sim:.4f} bits/throw")
    print(f"{'flip':>6} {'gain':>8} {'MI':>8} {'analytic':>9} {'simulated':>10}")
    for k, flip in enumerate(args.flips):
        ch = Channel.symmetric(args.outcomes, flip)
        gain = _clean(channel_rate_gain(game, ch))
        sim = simulate_wealth(game, ch, args.throws, args.seed + k + 1).rate
        print(f"{flip:6.3f} {gain:8.4f} {_clean(discrete_mi(joint_table(game, ch))):8.4f} {_clean(base + gain):9.4f} {_clean(sim):10.4f}")
    print(f"log2({args.outcomes}) = {np.log2(args.outcomes):.4f}")


if __name__ == "__main__":
    main()
