"""Runs each CLI subcommand and validates its JSON output against docs/schemas."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource


def main():
    cli, schema_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources(
        (s["$id"], Resource.from_contents(s)) for s in schemas.values())

    def check(doc_path, schema_name):
        schema = schemas[schema_name]
        validator = jsonschema.Draft202012Validator(schema, registry=registry)
        doc = json.loads(pathlib.Path(doc_path).read_text())
        errors = list(validator.iter_errors(doc))
        for e in errors:
            print(f"{doc_path}: {e.json_path}: {e.message}")
        return not errors

    def run(*args):
        subprocess.run([cli, *args], check=True, stdout=subprocess.DEVNULL)

    ok = True
    with tempfile.TemporaryDirectory() as d:
        d = pathlib.Path(d)
        run("simulate", "--scenario", "G.1", "--seed", "2", "--output", str(d / "g.csv"))
        run("simulate", "--scenario", "M", "--seed", "2", "--output", str(d / "m.csv"))
        ok &= check(d / "g.truth.json", "truth.schema.json")
        ok &= check(d / "m.truth.json", "truth.schema.json")
        run("detect", "--input", str(d / "g.csv"), "--truth", str(d / "g.truth.json"), "--seed", "2",
            "--stability", "--subsamples", "5", "--output", str(d / "g.json"))
        ok &= check(d / "g.json", "detect.schema.json")
        run("detect", "--input", str(d / "m.csv"), "--truth", str(d / "m.truth.json"), "--seed", "2",
            "--lag-max", "2", "--output", str(d / "m.json"))
        ok &= check(d / "m.json", "detect.schema.json")
        run("benchmark", "--scenario", "G.1", "--seed", "3", "--replicates", "2",
            "--sweep-blocksize", "15,20", "--output", str(d / "b.json"))
        ok &= check(d / "b.json", "benchmark.schema.json")
        run("benchmark", "--scenario", "M", "--seed", "3", "--replicates", "1", "--output", str(d / "bm.json"))
        ok &= check(d / "bm.json", "benchmark.schema.json")
    print("all documents valid" if ok else "schema violations found")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
