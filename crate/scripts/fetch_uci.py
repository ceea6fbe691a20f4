#!/usr/bin/env python3
"""Download the six UCI regression datasets and write numeric CSVs.

Usage: python3 scripts/fetch_uci.py [--out data/uci]

Raw downloads are kept in <out>/raw. Their SHA-256 digests are written to
<out>/SHA256SUMS on the first successful fetch and verified on every later
run, so a changed upstream file is reported instead of silently used.
Only the standard library is needed.
"""

import argparse
import csv
import hashlib
import io
import math
import sys
import urllib.request
import xml.etree.ElementTree as ET
import zipfile
from pathlib import Path

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases"
SOURCES = {
    "forestfires.csv": f"{BASE}/forest-fires/forestfires.csv",
    "student.zip": f"{BASE}/00320/student.zip",
    "slump_test.data": f"{BASE}/concrete/slump/slump_test.data",
    "data_akbilgic.xlsx": f"{BASE}/00247/data_akbilgic.xlsx",
    "airfoil_self_noise.dat": f"{BASE}/00291/airfoil_self_noise.dat",
}

MONTHS = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"]
DAYS = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]


def sha256(data):
    return hashlib.sha256(data).hexdigest()


def read_sums(path):
    if not path.exists():
        return {}
    sums = {}
    for line in path.read_text().splitlines():
        digest, name = line.split(maxsplit=1)
        sums[name.strip()] = digest
    return sums


def fetch(raw_dir, sums):
    blobs = {}
    for name, url in SOURCES.items():
        target = raw_dir / name
        if target.exists():
            data = target.read_bytes()
        else:
            print(f"downloading {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                data = resp.read()
            target.write_bytes(data)
        digest = sha256(data)
        if name in sums and sums[name] != digest:
            sys.exit(f"checksum mismatch for {name}: recorded {sums[name]}, got {digest}")
        sums[name] = digest
        blobs[name] = data
    return blobs


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    print(f"wrote {path} ({len(rows)} rows)")


def forest(blob, out):
    # month and day become ordinal numbers; the burned area is log1p-transformed
    rows = list(csv.DictReader(io.StringIO(blob.decode())))
    header = ["X", "Y", "month", "day", "FFMC", "DMC", "DC", "ISI", "temp", "RH", "wind", "rain", "log_area"]
    data = []
    for r in rows:
        data.append(
            [float(r["X"]), float(r["Y"]), MONTHS.index(r["month"]) + 1, DAYS.index(r["day"]) + 1]
            + [float(r[k]) for k in ["FFMC", "DMC", "DC", "ISI", "temp", "RH", "wind", "rain"]]
            + [math.log1p(float(r["area"]))]
        )
    write_csv(out / "forest.csv", header, data)


def student(blob, out):
    # math course; binary attributes coded 0/1, nominal ones and the two
    # interim grades dropped, final grade G3 as the response
    with zipfile.ZipFile(io.BytesIO(blob)) as z:
        text = z.read("student-mat.csv").decode()
    rows = list(csv.DictReader(io.StringIO(text), delimiter=";"))
    binary = {
        "school": "MS", "sex": "M", "address": "U", "famsize": "GT3", "Pstatus": "T",
        "schoolsup": "yes", "famsup": "yes", "paid": "yes", "activities": "yes",
        "nursery": "yes", "higher": "yes", "internet": "yes", "romantic": "yes",
    }
    numeric = ["age", "Medu", "Fedu", "traveltime", "studytime", "failures", "famrel",
               "freetime", "goout", "Dalc", "Walc", "health", "absences"]
    header = list(binary) + numeric + ["G3"]
    data = [[1.0 if r[k] == v else 0.0 for k, v in binary.items()] + [float(r[k]) for k in numeric] + [float(r["G3"])]
            for r in rows]
    write_csv(out / "student.csv", header, data)


def slump(blob, out):
    # seven mix ingredients predict the slump; the other two outputs are dropped
    rows = list(csv.reader(io.StringIO(blob.decode())))
    header = ["cement", "slag", "fly_ash", "water", "sp", "coarse", "fine", "slump"]
    data = [[float(v) for v in r[1:9]] for r in rows[1:] if r]
    write_csv(out / "slump.csv", header, data)


def xlsx_rows(blob):
    """Rows of the first worksheet as lists of strings (minimal reader)."""
    ns = {"m": "http://schemas.openxmlformats.org/spreadsheetml/2006/main"}
    with zipfile.ZipFile(io.BytesIO(blob)) as z:
        shared = []
        if "xl/sharedStrings.xml" in z.namelist():
            root = ET.fromstring(z.read("xl/sharedStrings.xml"))
            for si in root.findall("m:si", ns):
                shared.append("".join(t.text or "" for t in si.iter(f"{{{ns['m']}}}t")))
        sheet = ET.fromstring(z.read("xl/worksheets/sheet1.xml"))
    rows = []
    for row in sheet.iter(f"{{{ns['m']}}}row"):
        cells = {}
        for c in row.findall("m:c", ns):
            ref = c.get("r")
            col = 0
            for ch in ref:
                if ch.isalpha():
                    col = col * 26 + ord(ch.upper()) - 64
            v = c.find("m:v", ns)
            text = v.text if v is not None else ""
            if c.get("t") == "s":
                text = shared[int(text)]
            cells[col - 1] = text
        if cells:
            rows.append([cells.get(i, "") for i in range(max(cells) + 1)])
    return rows


def stock(blob, out):
    # columns: date, ISE (TL), ISE (USD), SP, DAX, FTSE, NIKKEI, BOVESPA, EU, EM
    features = ["SP", "DAX", "FTSE", "NIKKEI", "BOVESPA", "EU", "EM"]
    data = []
    for r in xlsx_rows(blob):
        try:
            values = [float(v) for v in r[1:10]]
        except ValueError:
            continue
        if len(values) == 9:
            data.append(values)
    write_csv(out / "stockTL.csv", features + ["ISE_TL"], [v[2:] + [v[0]] for v in data])
    write_csv(out / "stockUSD.csv", features + ["ISE_USD"], [v[2:] + [v[1]] for v in data])


def airfoil(blob, out):
    header = ["frequency", "angle", "chord", "velocity", "thickness", "pressure"]
    data = [[float(v) for v in line.split()] for line in blob.decode().splitlines() if line.strip()]
    write_csv(out / "airfoil.csv", header, data)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "uci"))
    args = parser.parse_args()
    out = Path(args.out)
    raw = out / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    sums_path = out / "SHA256SUMS"
    sums = read_sums(sums_path)
    blobs = fetch(raw, sums)
    sums_path.write_text("".join(f"{d}  {n}\n" for n, d in sorted(sums.items())))
    forest(blobs["forestfires.csv"], out)
    student(blobs["student.zip"], out)
    slump(blobs["slump_test.data"], out)
    stock(blobs["data_akbilgic.xlsx"], out)
    airfoil(blobs["airfoil_self_noise.dat"], out)


if __name__ == "__main__":
    main()
