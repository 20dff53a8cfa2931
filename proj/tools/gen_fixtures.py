#!/usr/bin/env python3
"""Regenerates the synthetic fixtures under data/.

  data/mdar_synthetic.jsonl          25 records with gold and erroneous chains
  data/mdar_synthetic.scripts.json   scripted replies per record id
  data/eval_scripted.json            eval config for the scripted backend
  data/cam_pairs.json                separable feature pairs for train-cam
  data/cam_pairs_heldout.json        more pairs from the same distribution
  data/demo_script.json              reply table for `cmrf ask`
  data/images/*.png                  small placeholder scenes

Output is fully determined by SEED.
"""

import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

SEED = 20240611
ROOT = Path(__file__).resolve().parent.parent / "data"

COLORS = ["red", "blue", "green", "yellow"]
SHAPES = ["circle", "square", "triangle"]
RGB = {"red": (220, 40, 40), "blue": (40, 70, 220), "green": (40, 170, 60), "yellow": (230, 200, 30)}


def draw_scene(path, objects):
    img = Image.new("RGB", (96, 96), (250, 250, 250))
    d = ImageDraw.Draw(img)
    for color, shape, x, y in objects:
        box = [x, y, x + 14, y + 14]
        if shape == "circle":
            d.ellipse(box, fill=RGB[color])
        elif shape == "square":
            d.rectangle(box, fill=RGB[color])
        else:
            d.polygon([(x + 7, y), (x, y + 14), (x + 14, y + 14)], fill=RGB[color])
    img.save(path, optimize=True)


def make_record(i, rng):
    rid = f"mdar-syn-{i:03d}"
    color, other = rng.sample(COLORS, 2)
    shape, anchor = rng.sample(SHAPES, 2)
    count = rng.randint(1, 5)
    objects = [(other, anchor, 60, 40)]
    for k in range(count):
        objects.append((color, shape, 4 + (k % 3) * 17, 10 + (k // 3) * 40))
    for k in range(rng.randint(0, 2)):
        objects.append((color, shape, 62 + k * 16, 76))
    image = f"images/{rid}.png"
    draw_scene(ROOT / image, objects)

    question = f"How many {color} {shape}s are to the left of the {other} {anchor}?"
    steps = [
        {"q": f"Where is the {other} {anchor}?", "modality": "V",
         "region": [0.55, 0.3, 0.3, 0.3], "a": f"The {other} {anchor} is right of center."},
        {"q": f"Count the {color} {shape}s left of the {other} {anchor}.", "modality": "V",
         "region": [0.0, 0.0, 0.55, 1.0], "a": f"There are {count} of them."},
        {"q": "Combine the count with the question.", "modality": "X",
         "a": f"The answer is {count}."},
    ]
    answer = str(count)
    wrong = str(count + 1)
    erroneous = [
        {"steps": [steps[0],
                   dict(steps[1], a=f"There are {wrong} of them."),
                   dict(steps[2], a=f"The answer is {wrong}.")],
         "flaw": "inference-flaw", "flaw_step": 2},
    ]
    if i % 2 == 0:
        erroneous.append(
            {"steps": [steps[0],
                       {"q": f"Count every {shape} in the image.", "modality": "V",
                        "a": f"There are {count + 2} shapes."},
                       dict(steps[2], a=f"The answer is {count + 2}.")],
             "flaw": "decomposition-flaw", "flaw_step": 2})
    rec = {"id": rid, "image": image, "question": question, "steps": steps,
           "answer": answer, "erroneous_chains": erroneous}
    if i % 3 == 0:
        choices = sorted({str(max(0, count - 1)), answer, wrong, str(count + 2)}, key=int)
        rec["choices"] = choices
    return rec


def rdu_reply(subs, start=1):
    lines = []
    for n, (tag, region, text) in enumerate(subs, start):
        reg = "" if region is None else "(" + ",".join(str(v) for v in region) + ") "
        lines.append(f"{n}. [{tag}] {reg}{text}")
    return "\n".join(lines)


def verdict(score, flaw, reason):
    return f"SCORE: {score}\nFLAW: {flaw}\nREASON: {reason}"


def final_verdict(score):
    return f"SCORE: {score}/10\nREASON: final answer checked against the steps"


class Plan:
    """Builds one record's reply table iteration by iteration, mirroring the
    order in which the engine consumes replies for each role."""

    def __init__(self, rec):
        self.rec = rec
        self.rdu, self.cie, self.cam = [], [], []
        self.subs = [(s["modality"], s.get("region"), s["q"]) for s in rec["steps"]]

    def initial(self, answers, final):
        self.rdu.append(rdu_reply(self.subs))
        self.cie.extend(answers)
        self.cie.append(final)

    def reinfer(self, step, answers, final):
        self.cie.extend(answers[step - 1:])
        self.cie.append(final)

    def redecompose(self, step, new_subs, answers, final):
        self.subs = self.subs[:step - 1] + new_subs
        self.rdu.append(rdu_reply(new_subs, step))
        self.cie.extend(answers[step - 1:])
        self.cie.append(final)

    def assess(self, verdicts, final_score):
        for score, flaw in verdicts:
            self.cam.append(verdict(score, flaw, "checked" if flaw == "consistent" else "looks wrong"))
        self.cam.append(final_verdict(final_score))

    def script(self):
        return {"rdu": self.rdu, "cie": self.cie, "cam": self.cam}


def make_script(i, rec):
    p = Plan(rec)
    gold = [s["a"] for s in rec["steps"]]
    ans, wrong = rec["answer"], str(int(rec["answer"]) + 1)
    bad = [gold[0], f"There are {wrong} of them.", f"The answer is {wrong}."]
    ok = "consistent"
    kind = i % 6
    if kind == 0:
        # accepted at once
        p.initial(gold, ans)
        p.assess([(9, ok), (9, ok), (8, ok)], 9)
    elif kind == 1:
        # inference flaw at step 2, fixed by re-inference
        p.initial(bad, wrong)
        p.assess([(9, ok), (3, "inference-flaw"), (6, ok)], 5)
        p.reinfer(2, gold, ans)
        p.assess([(9, ok), (9, ok), (9, ok)], 9)
    elif kind == 2:
        # decomposition flaw at step 2, fixed by re-decomposition
        p.initial(bad, wrong)
        p.assess([(8, ok), (2, "decomposition-flaw"), (7, ok)], 4)
        color_q = rec["steps"][1]["q"]
        p.redecompose(2, [("V", [0.0, 0.0, 0.55, 1.0], color_q + " Check each shape once."),
                          ("T", None, "State the final count.")], gold, ans)
        p.assess([(8, ok), (9, ok), (9, ok)], 9)
    elif kind == 3:
        # never reaches tau; best iteration is the second
        p.initial(bad, wrong)
        p.assess([(8, ok), (4, "inference-flaw"), (6, ok)], 6)
        p.reinfer(2, gold, ans)
        p.assess([(8, ok), (8, ok), (7, ok)], 8)
        p.reinfer(3, gold, ans)
        p.assess([(8, ok), (8, ok), (5, "factual-flaw")], 7)
        p.reinfer(3, bad, wrong)
        p.assess([(8, ok), (7, ok), (4, "inference-flaw")], 5)
    elif kind == 4:
        # first verdict garbled, repaired; two iterations
        p.initial(bad, wrong)
        p.cam.append("The chain seems fine overall.")
        p.assess([(7, ok), (5, "inference-flaw"), (6, ok)], 6)
        p.reinfer(2, gold, ans)
        p.assess([(9, ok), (8, ok), (9, ok)], 9)
    else:
        if i == 23:
            # decomposer never produces a list: the run aborts
            p.rdu.extend(["I cannot split this question.", "Still no list, sorry."])
        else:
            p.initial(gold, ans)
            p.assess([(10, ok), (9, ok), (10, ok)], 10)
    return p.script()


def make_pairs(rng, count, prefix):
    pairs = []
    for n in range(count):
        length = rng.choice([0.25, 0.375, 0.5])
        pos = [length, rng.uniform(0.72, 0.95), rng.uniform(0.6, 0.9), rng.uniform(0.0, 0.2),
               rng.uniform(0.1, 0.4), rng.uniform(0.0, 0.3), 0.0, 0.0]
        neg = [length, rng.uniform(0.2, 0.5), rng.uniform(0.0, 0.35), rng.uniform(0.34, 1.0),
               rng.uniform(0.1, 0.4), rng.uniform(0.0, 0.3), rng.choice([0.0, 0.34]),
               rng.choice([0.0, 1.0])]
        pairs.append({"id": f"{prefix}-{n:02d}", "positive": [round(v, 4) for v in pos],
                      "negative": [round(v, 4) for v in neg]})
    return {"schema": "cmrf.cam-features.v1", "pairs": pairs}


def main():
    rng = random.Random(SEED)
    (ROOT / "images").mkdir(parents=True, exist_ok=True)
    records = [make_record(i, rng) for i in range(25)]
    with open(ROOT / "mdar_synthetic.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")
    scripts = {r["id"]: make_script(i, r) for i, r in enumerate(records)}
    with open(ROOT / "mdar_synthetic.scripts.json", "w") as f:
        json.dump({"records": scripts}, f, indent=1)
        f.write("\n")
    config = {"tau": 0.85, "k_max": 3, "n_max": 8, "seed": 42, "cam_mode": "prompted",
              "backend": {"kind": "scripted", "script": "mdar_synthetic.scripts.json"}}
    with open(ROOT / "eval_scripted.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")
    with open(ROOT / "cam_pairs.json", "w") as f:
        json.dump(make_pairs(rng, 48, "pair"), f, indent=1)
        f.write("\n")
    with open(ROOT / "cam_pairs_heldout.json", "w") as f:
        json.dump(make_pairs(rng, 16, "heldout"), f, indent=1)
        f.write("\n")
    demo = make_script(1, records[1])
    with open(ROOT / "demo_script.json", "w") as f:
        json.dump(demo, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
