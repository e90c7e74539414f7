"""A tiny on-disk cohort for extraction and CLI tests."""
import json

import numpy as np
from PIL import Image

PATIENTS = [("p0", "adaptive"), ("p1", "not-adaptive"), ("p2", "adaptive"), ("p3", "not-adaptive")]
PARAMS = {"window": 20, "stride": 10, "glcm_levels": 8}


def write_cohort(root, seed=0, n_slices=2):
    rng = np.random.default_rng(seed)
    for k, (pid, _) in enumerate(PATIENTS):
        pdir = root / "slides" / pid
        pdir.mkdir(parents=True)
        rgb = rng.integers(0, 200, (30, 30, 3)).astype(np.uint8)
        rgb[:, :, 0] = 200  # saturated, dark enough to count as tissue
        Image.fromarray(rgb).save(pdir / "crop0.png")
        cdir = root / "ct" / pid
        cdir.mkdir(parents=True)
        for s in range(n_slices):
            Image.fromarray(rng.integers(0, 256, (12, 12)).astype(np.uint8)).save(cdir / f"s{s}.png")
    lines = ["patient_id,T,sex,age"] + [f"{pid},T{1 + k % 3},{'MF'[k % 2]},{50 + k}"
                                        for k, (pid, _) in enumerate(PATIENTS)]
    (root / "records.csv").write_text("\n".join(lines) + "\n")
    cohort = {
        "patients": [{"id": p, "label": lab} for p, lab in PATIENTS],
        "inputs": {
            "pathomics": {"kind": "pathology", "dir": "slides"},
            "radiomics": {"kind": "ct", "dir": "ct"},
            "semantic": {"kind": "records", "table": "records.csv",
                         "encoding": {"ordinal": {"T": ["T1", "T2", "T3"]}, "onehot": {"sex": ["M", "F"]},
                                      "numeric": ["age"]}},
        },
    }
    (root / "cohort.json").write_text(json.dumps(cohort))
    return cohort
