"""Synthetic social-history corpora with known gold values.

Stand-in for credentialed clinical data: each note mixes tobacco, community
and economics statements plus neutral filler. The default mock-annotator
rules in ``data/default_config.toml`` label these templates exactly, so
noise-free mock annotation reproduces gold.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import NoteRecord

JOBS = ["carpenter", "teacher", "nurse", "mechanic", "accountant", "plumber", "chef",
        "bus driver", "electrician", "lawyer", "cashier", "farmer", "engineer", "painter"]
CITIES = ["Boston", "Ohio", "Haiti", "Portugal", "Texas", "Vermont", "Ireland", "Chicago"]

TOBACCO = {
    "Present": [
        "Smokes {n} ppd.", "Current smoker, {n} pack-years.", "Smokes {n} cigarettes a day.",
        "Active tobacco use, about {n} cigarettes daily.", "Chews tobacco.",
        "Smokes cigars on weekends.", "Uses snuff daily.", "Still smoking despite counseling.",
    ],
    "Past": [
        "Former smoker, quit {n} years ago.", "Quit smoking in {year}.",
        "Remote tobacco history, {n} pack-years.", "Ex-smoker.",
        "Smoked for {n} years, quit recently.", "Prior cigar use, stopped in {year}.",
    ],
    "Never": [
        "Never smoker.", "Denies tobacco use.", "Never used tobacco.", "Non-smoker.",
        "No history of smoking.", "No tobacco, alcohol or drugs.",
    ],
    "Unsure": ["Tobacco use unclear.", "Smoking status unknown."],
}

COMMUNITY = {
    "Present": [
        "Lives with his wife.", "Lives with her husband and two children.",
        "Married, lives with spouse.", "Close to her daughter who visits daily.",
        "Supportive family nearby.", "Lives with partner.", "Has many friends at church.",
        "His son checks on him every day.",
    ],
    "Absent": [
        "Lives alone.", "Widowed, no family nearby.", "Estranged from family.",
        "Homeless, no contacts.", "Divorced, lives alone.", "No social support.",
    ],
}

ECONOMICS = {
    "Employed": [
        "Works as a {job}.", "Employed as a {job}.", "Currently working full time as a {job}.",
        "Still working as a {job}.",
    ],
    "Unemployed": [
        "Currently unemployed.", "Lost his job last year.", "Out of work since {year}.",
        "Not working, on public assistance.",
    ],
    "Retired": ["Retired {job}.", "Retired in {year}.", "Formerly a {job}, now retired."],
}

FILLER = [
    "Drinks {n} beers a week.", "Occasional alcohol.", "Denies illicit drug use.",
    "Born in {city}.", "Enjoys gardening.", "Has a dog.", "Originally from {city}.",
    "Walks daily for exercise.", "Drinks coffee every morning.", "Likes to read.",
    "Recently moved to a new apartment.", "Watches baseball.",
]

EXPLANATIONS = {
    ("tobacco", "Present"): "The note describes ongoing tobacco use.",
    ("tobacco", "Past"): "The note describes tobacco use that has since stopped, which counts as a smoking history.",
    ("tobacco", "Never"): "The note states the patient has never used tobacco.",
    ("tobacco", "No Mention"): "Tobacco is not mentioned, so no smoking history is documented.",
    ("community", "Present"): "The patient has family or friends providing support.",
    ("community", "Absent"): "The note describes a patient without a social support network.",
    ("community", "No Mention"): "Nothing in the note documents social support.",
    ("economics", "Employed"): "The patient currently holds a job.",
    ("economics", "Unemployed"): "The patient is currently without work.",
    ("economics", "Retired"): "The patient no longer works because they retired.",
    ("economics", "No Mention"): "Employment is not mentioned, so unemployment is not documented.",
}

# raw value frequencies: (values, probabilities)
TOBACCO_P = (["Present", "Past", "Never", "No Mention", "Unsure"], [0.22, 0.22, 0.3, 0.22, 0.04])
COMMUNITY_P = (["Present", "Absent", "No Mention"], [0.45, 0.35, 0.2])
ECONOMICS_P = (["Employed", "Unemployed", "Retired", "No Mention"], [0.35, 0.2, 0.25, 0.2])


def _fill(template: str, rng) -> str:
    return template.format(
        n=int(rng.integers(1, 40)),
        year=int(rng.integers(1975, 2020)),
        job=JOBS[int(rng.integers(len(JOBS)))],
        city=CITIES[int(rng.integers(len(CITIES)))],
    )


def _choose(options, rng):
    values, probs = options
    return values[int(rng.choice(len(values), p=probs))]


def social_history(rng) -> tuple[str, dict[str, str]]:
    gold = {
        "tobacco": _choose(TOBACCO_P, rng),
        "community": _choose(COMMUNITY_P, rng),
        "economics": _choose(ECONOMICS_P, rng),
    }
    sentences = []
    for table, cat in ((TOBACCO, "tobacco"), (COMMUNITY, "community"), (ECONOMICS, "economics")):
        raw = gold[cat]
        if raw in table:
            opts = table[raw]
            sentences.append(_fill(opts[int(rng.integers(len(opts)))], rng))
    n_filler = int(rng.integers(0 if sentences else 1, 4))
    for i in rng.choice(len(FILLER), size=n_filler, replace=False):
        sentences.append(_fill(FILLER[int(i)], rng))
    order = rng.permutation(len(sentences))
    return " ".join(sentences[i] for i in order), gold


def discharge_note(body: str | None, rng, truncated: bool = False) -> str:
    """Wrap a social-history body in a discharge-summary skeleton."""
    parts = [
        "Admission Date: [**2150-1-1**]",
        "",
        "History of Present Illness:",
        f"Patient presents with {['fever', 'chest pain', 'dyspnea', 'syncope'][int(rng.integers(4))]}.",
        "",
    ]
    if body is not None:
        parts += ["Social History:", body]
        if truncated:
            return "\n".join(parts)
        parts.append("")
    parts += ["Family History:", "Noncontributory.", "", "Physical Exam:", "Afebrile, comfortable."]
    return "\n".join(parts)


def generate_notes(n: int, seed: int, id_prefix: str = "n", with_gold: bool = True,
                   raw: bool = False, p_missing: float = 0.0, p_truncated: float = 0.0) -> list[NoteRecord]:
    rng = np.random.default_rng(seed)
    notes = []
    for i in range(n):
        body, gold = social_history(rng)
        if raw:
            missing = rng.random() < p_missing
            truncated = rng.random() < p_truncated
            text = discharge_note(None if missing else body, rng, truncated)
        else:
            text = body
        notes.append(NoteRecord(f"{id_prefix}{i:06d}", text, gold=gold if with_gold else None,
                                source_tag="synthetic"))
    return notes


def write_dataset(out_dir, n_labeled: int = 4200, n_unlabeled: int = 8000, seed: int = 0) -> dict[str, Path]:
    """Write labeled / unlabeled corpora plus an explanations file per category."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled = generate_notes(n_labeled, seed, "L")
    unlabeled = generate_notes(n_unlabeled, seed + 1, "U", with_gold=False)
    paths = {"labeled": out / "labeled.jsonl", "unlabeled": out / "unlabeled.jsonl",
             "explanations": out / "explanations.jsonl"}
    for key, notes in (("labeled", labeled), ("unlabeled", unlabeled)):
        with open(paths[key], "w", encoding="utf-8") as fh:
            for note in notes:
                fh.write(json.dumps(note.to_json(), sort_keys=True) + "\n")
    with open(paths["explanations"], "w", encoding="utf-8") as fh:
        for note in labeled:
            for cat, raw in sorted(note.gold.items()):
                text = EXPLANATIONS.get((cat, raw))
                if text:
                    fh.write(json.dumps({"id": note.id, "category": cat, "explanation": text}) + "\n")
    return paths
