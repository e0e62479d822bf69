"""Smoke test for the Python bindings.

Imports an installed `graphcover` module, or falls back to the library
built by `cargo build -p graphcover-py`. With `--checkpoint DIR` it also
renders a cover through a trained checkpoint.
"""

import argparse
import base64
import json
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module(tmp):
    try:
        import graphcover

        return graphcover
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libgraphcover.so"
        if lib.exists():
            shutil.copy(lib, Path(tmp) / "graphcover.so")
            sys.path.insert(0, tmp)
            import graphcover

            return graphcover
    sys.exit("graphcover not installed and no built library under target/")


GRAPH = {
    "objects": [
        {"id": "sun", "category": "sun", "grid_cell": 2, "size": 4, "appearance": {"mode": "seed", "seed": 4}},
        {"id": "house", "category": "house", "grid_cell": 17, "size": 6, "appearance": {"mode": "random"}},
        {"id": "t", "category": "title", "grid_cell": 7, "size": 3, "appearance": {"mode": "random"}, "text": "Lorem Ipsum"},
    ],
    "relations": [{"subject": "sun", "predicate": "above", "object": "house"}],
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", type=Path)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        gc = load_module(tmp)

        bits = gc.encode_location(12, 3)
        assert len(bits) == 35 and sum(bits) == 2
        assert gc.decode_location(bits) == (12, 3)
        for cell in range(25):
            for size in range(1, 11):
                assert gc.decode_location(gc.encode_location(cell, size)) == (cell, size)
        try:
            gc.encode_location(25, 0)
            raise AssertionError("grid cell 25 accepted")
        except ValueError:
            pass

        doc = json.dumps(GRAPH)
        assert gc.validate_graph(doc, ["sun", "house"]) == []
        problems = gc.validate_graph(doc, ["sun"])
        assert problems and problems[0][0] == "/objects/1/category", problems

        corpus = Path(tmp) / "corpus"
        gc.synthetic_corpus(str(corpus), 3, 2, seed=1)
        assert len(list((corpus / "images").iterdir())) == 3

        if args.checkpoint:
            gen = gc.Generator(str(args.checkpoint))
            assert "title" in gen.categories()
            before = gen.checksum()
            request = json.dumps({"graph": GRAPH, "seed": 2, "variations": 2, "title": "Dusk"})
            first = json.loads(gen.generate(request))
            second = json.loads(gen.generate(request))
            assert len(first["images"]) == 2
            assert first["images"][0]["sha256"] == second["images"][0]["sha256"]
            assert base64.b64decode(first["images"][0]["data"])[1:4] == b"PNG"
            assert gen.checksum() == before
    print("python smoke test passed")


if __name__ == "__main__":
    main()
