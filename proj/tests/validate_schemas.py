"""Validates JSON written by the CLI tests against the shipped schemas."""

import json
import pathlib
import sys

import jsonschema
from referencing import Registry, Resource

ARTIFACTS = {
    "prepare_summary.json": "prepare_summary.schema.json",
    "report.json": "train_report.schema.json",
    "timing.json": "timing.schema.json",
    "evaluate.json": "evaluate.schema.json",
    "run_config.json": "run_config.schema.json",
}


def main(schema_dir: str, artifact_dir: str) -> int:
    schemas = {p.name: json.loads(p.read_text()) for p in pathlib.Path(schema_dir).glob("*.schema.json")}
    registry = Registry().with_resources((name, Resource.from_contents(s)) for name, s in schemas.items())
    failures = 0
    for artifact, schema_name in ARTIFACTS.items():
        path = pathlib.Path(artifact_dir) / artifact
        if not path.exists():
            print(f"FAIL {artifact}: not produced")
            failures += 1
            continue
        schema = schemas[schema_name]
        jsonschema.Draft202012Validator.check_schema(schema)
        validator = jsonschema.Draft202012Validator(schema, registry=registry)
        errors = sorted(validator.iter_errors(json.loads(path.read_text())), key=lambda e: list(e.path))
        for e in errors:
            print(f"FAIL {artifact}: {'/'.join(map(str, e.path))}: {e.message}")
        failures += bool(errors)
        if not errors:
            print(f"ok   {artifact} against {schema_name}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
