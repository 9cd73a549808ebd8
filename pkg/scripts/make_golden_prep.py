"""Regenerate the preprocessing golden files from the independent oracle in
tests/oracles.py (never from the package normalizer)."""
import csv
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import oracle_normalize  # noqa: E402

from hateclf.text_prep import EMOTICONS, default_lexicon  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"

CLI_ROWS = [
    ["1", "@Jane1 sooo wrong!!! #notsexist http://t.co/x", "sexism", "x"],
    ["2", "Yeeeessss, \"quoted\", text :)", "neither", "y"],
    ["3", "#BanTheBurka 2015", "racism", "z"],
]


def main():
    lexicon = default_lexicon()
    lines = (FIXTURES / "prep_inputs.txt").read_text(encoding="utf-8").split("\n")[:-1]
    with open(FIXTURES / "prep_golden.tsv", "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line.replace("\t", "\\t") + "\t" + oracle_normalize(line, lexicon, EMOTICONS) + "\n")
    header = ["id", "text", "label", "extra"]
    for name, transform in (("prep_cli_input.csv", lambda t: t), ("prep_cli_expected.csv", lambda t: oracle_normalize(t, lexicon, EMOTICONS))):
        with open(FIXTURES / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for rid, text, label, extra in CLI_ROWS:
                w.writerow([rid, transform(text), label, extra])


if __name__ == "__main__":
    main()
