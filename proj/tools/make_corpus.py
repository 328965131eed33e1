#!/usr/bin/env python3
"""Writes the bundled toy corpus: procedurally generated short stories (CC0).

Each story introduces a few named characters and places and keeps referring back
to them, so later text depends on context hundreds of bytes earlier.

    python3 tools/make_corpus.py --out data/tiny_corpus.txt --bytes 400000 --seed 7
"""

import argparse
import random

NAMES = ["Ada", "Bram", "Cora", "Dunstan", "Edith", "Fenwick", "Greta", "Hollis", "Ines", "Jasper",
         "Kestrel", "Linnea", "Magnus", "Nell", "Osric", "Perpetua", "Quill", "Rowena", "Silas", "Tamsin",
         "Ulric", "Vesna", "Wendell", "Xanthe", "Yorick", "Zelda"]
PLACES = ["the mill", "the harbour", "the old library", "the orchard", "the lighthouse", "the market",
          "the forge", "the chapel", "the bridge", "the granary", "the inn", "the quarry"]
OBJECTS = ["a brass key", "a green lantern", "a folded map", "a silver bell", "a bundle of letters",
           "a wooden flute", "a jar of honey", "a coil of rope", "a cracked compass", "a loaf of rye bread"]
WEATHER = ["rain drummed on the roofs", "a cold wind came off the sea", "the sun sat low and orange",
           "fog lay thick in the lanes", "snow had begun to fall", "the air was still and warm"]
VERBS = ["carried", "hid", "found", "mended", "sold", "borrowed", "lost", "buried", "polished", "traded"]
FEELINGS = ["tired", "hopeful", "uneasy", "cheerful", "stubborn", "curious", "anxious", "content"]


def story(rng: random.Random) -> str:
    cast = rng.sample(NAMES, 3)
    home, away = rng.sample(PLACES, 2)
    thing = rng.choice(OBJECTS)
    hero, friend, rival = cast
    lines = [
        f"In the village near {home}, {hero} kept {thing}. {rng.choice(WEATHER).capitalize()}.",
        f"{hero} was {rng.choice(FEELINGS)}, and {friend} was {rng.choice(FEELINGS)}.",
    ]
    for _ in range(rng.randint(4, 9)):
        who = rng.choice(cast)
        other = rng.choice([c for c in cast if c != who])
        place = rng.choice([home, away])
        kind = rng.randrange(5)
        if kind == 0:
            lines.append(f"{who} {rng.choice(VERBS)} {thing} at {place} while {other} watched.")
        elif kind == 1:
            lines.append(f"\"Have you seen {thing}?\" asked {who}. \"Only at {place},\" said {other}.")
        elif kind == 2:
            lines.append(f"By evening {rng.choice(WEATHER)}, and {who} walked from {home} to {away}.")
        elif kind == 3:
            lines.append(f"{rival} wanted {thing} too, but {hero} would not give it up.")
        else:
            lines.append(f"{who} felt {rng.choice(FEELINGS)} and told {other} about {place}.")
    lines.append(f"In the end {hero} brought {thing} back to {home}, and {friend} and {rival} went home.")
    return " ".join(lines) + "\n\n"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--bytes", type=int, default=400_000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    parts, size = [], 0
    while size < args.bytes:
        s = story(rng)
        parts.append(s)
        size += len(s.encode("utf-8"))
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(parts))


if __name__ == "__main__":
    main()
