"""Write a seeded random world, and optionally the standard forgetting profiles, to disk."""
from __future__ import annotations

import argparse
from pathlib import Path

from kgprobe.study import standard_profiles, write_world
from kgprobe.world import random_world


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--facts", type=int, default=40)
    ap.add_argument("--aliases", type=int, default=3)
    ap.add_argument("--generic", type=int, default=0, help="size of an off-topic cluster hung off the seed")
    ap.add_argument("--ignorance", type=float, default=0.0, help="fraction of facts the model does not know")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--profiles", action="store_true", help="also write profile_<label>.json files")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    args = ap.parse_args()

    w = random_world(args.seed, n_facts=args.facts, n_aliases=args.aliases, n_generic=args.generic,
                     ignorance=args.ignorance, n_seeds=args.seeds)
    write_world(w, standard_profiles(w, args.seed) if args.profiles else {}, args.out)
    print(f"{args.out / 'world.json'}: {len(w.facts)} facts, seeds {w.seeds}")


if __name__ == "__main__":
    main()
