import json
import subprocess
import sys
from pathlib import Path

import jsonschema

exe, configs, schemas, work = sys.argv[1], Path(sys.argv[2]), Path(sys.argv[3]), Path(sys.argv[4])
config_schema = json.loads((schemas / "config.schema.json").read_text())
report_schema = json.loads((schemas / "report.schema.json").read_text())
validator = jsonschema.Draft7Validator(config_schema)
failures = []

for path in sorted(configs.glob("*.json")):
    errors = list(validator.iter_errors(json.loads(path.read_text())))
    if path.stem in ("malformed", "spectrum_empty_grid"):
        if not errors:
            failures.append(f"{path.name} should be rejected")
    elif errors:
        failures.append(f"{path.name}: {errors[0].message}")

runs = [("profile", "profile_constant"), ("spectrum", "spectrum_constant"), ("check", "check_heat"),
        ("simulate", "simulate_equilibrium")]
for cmd, name in runs:
    out = work / name
    subprocess.run([exe, cmd, "--config", str(configs / f"{name}.json"), "--out", str(out)],
                   stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    materialized = out / "config.json"
    if not materialized.exists():
        failures.append(f"{name}: no materialized config")
        continue
    errors = list(validator.iter_errors(json.loads(materialized.read_text())))
    if errors:
        failures.append(f"{name} materialized config: {errors[0].message}")

report = work / "check_heat" / "report.json"
if report.exists():
    errors = list(jsonschema.Draft7Validator(report_schema).iter_errors(json.loads(report.read_text())))
    if errors:
        failures.append(f"report: {errors[0].message}")
else:
    failures.append("check produced no report")

for f in failures:
    print("FAIL", f)
print("schema checks:", "ok" if not failures else f"{len(failures)} failures")
sys.exit(1 if failures else 0)
