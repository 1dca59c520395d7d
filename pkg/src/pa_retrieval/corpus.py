"""Synthetic coverage-policy corpus, PA request generator and the rule-based oracle."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import DIM, HORIZON
from .vec import embed_text


class ChunkType(str, enum.Enum):
    COVERAGE = "coverage_criteria"
    BILLING = "billing"
    EXCLUSION = "exclusion"


class Decision(str, enum.Enum):
    APPROVE = "approve"
    DENY = "deny"
    PEND = "pend"


DECISIONS = (Decision.APPROVE, Decision.DENY, Decision.PEND)
DEFAULT_OUTCOME_WEIGHTS = (0.376, 0.119, 0.505)


@dataclass(frozen=True)
class ProcedureSpec:
    cpt: str
    name: str
    alias: str
    chunk_count: int
    shared_count: int
    train: int
    test: int
    covered: tuple[str, ...]
    excluded: tuple[str, ...]
    unlisted: tuple[str, ...]
    age_range: tuple[int, int]
    vocab: tuple[str, ...]
    # exclusive (non-shared) chunk split: (coverage, billing, exclusion)
    own_types: tuple[int, int, int]
    # narrative sentences padded into this procedure's criteria text; dilutes the code match
    difficulty: int = 8

    @property
    def icd10_pool(self) -> tuple[str, ...]:
        return self.covered + self.excluded + self.unlisted


DEFAULT_PROCEDURES: tuple[ProcedureSpec, ...] = (
    ProcedureSpec("45378", "Colonoscopy", "diagnostic colonoscopy", 30, 0, 201, 23,
                  ("K92.1", "D50.9", "R19.5", "Z86.010"), ("K59.00", "R14.0"), ("R10.9", "K58.9", "R63.4"),
                  (45, 85), ("colon", "polyp", "bowel preparation", "rectal bleeding", "iron deficiency anemia",
                             "endoscopy", "adenoma surveillance"), (21, 8, 1)),
    ProcedureSpec("70450", "CT Head", "computed tomography head without contrast", 56, 54, 195, 27,
                  ("S06.0X0A", "R51.9", "G45.9", "I63.9"), ("G44.209", "F41.1"), ("R42", "H53.9", "G47.00"),
                  (1, 95), ("intracranial hemorrhage", "head trauma", "focal neurological deficit",
                            "altered mental status", "stroke"), (2, 0, 0)),
    ProcedureSpec("70486", "CT Maxillofacial", "computed tomography maxillofacial area", 43, 43, 199, 19,
                  ("J32.9", "S02.40XA", "J01.90", "K04.7"), ("J30.9", "R09.81"), ("J34.89", "M26.60", "R22.0"),
                  (5, 90), ("sinus", "facial fracture", "orbital", "chronic rhinosinusitis", "dental abscess"),
                  (0, 0, 0)),
    ProcedureSpec("70553", "MRI Brain", "magnetic resonance imaging brain with and without contrast", 54, 54,
                  208, 28, ("G35", "C71.9", "G40.909", "R90.0"), ("G43.909", "R51.0"), ("G93.40", "R41.82", "F03.90"),
                  (1, 95), ("demyelinating disease", "seizure", "brain tumor", "gadolinium", "white matter lesion"),
                  (0, 0, 0)),
    ProcedureSpec("71260", "CT Chest", "computed tomography thorax with contrast", 44, 42, 205, 20,
                  ("R91.1", "C34.90", "I26.99", "J84.10"), ("J20.9", "R05.9"), ("R06.02", "R07.89", "J98.4"),
                  (18, 90), ("pulmonary nodule", "lung cancer staging", "pulmonary embolism", "mediastinum"),
                  (1, 1, 0)),
    ProcedureSpec("72148", "MRI Lumbar Spine", "magnetic resonance imaging lumbar spinal canal", 55, 49, 178, 20,
                  ("L54", "M51.26", "M48.061", "G83.4"), ("M54.50", "S33.5XXA"), ("M54.16", "M47.816", "M99.03"),
                  (18, 85), ("radiculopathy", "spinal stenosis", "cauda equina", "conservative therapy",
                             "low back pain"), (4, 2, 0)),
    ProcedureSpec("74177", "CT Abdomen Pelvis", "computed tomography abdomen and pelvis with contrast", 46, 42,
                  193, 12, ("K57.92", "R10.31", "C18.9", "N20.0"), ("R10.84", "K30"), ("R19.00", "K59.09", "R93.5"),
                  (18, 90), ("appendicitis", "diverticulitis", "renal calculus", "abscess", "abdominal mass"),
                  (3, 1, 0)),
    ProcedureSpec("77067", "Screening Mammography", "bilateral screening mammography", 41, 31, 191, 18,
                  ("Z12.31", "Z80.3", "Z85.3", "R92.8"), ("N63.0", "N64.4"), ("Z78.0", "N60.19", "R92.2"),
                  (40, 84), ("breast cancer screening", "tomosynthesis", "annual interval", "breast density"),
                  (6, 3, 1)),
    ProcedureSpec("92507", "Speech-Language Therapy", "speech language pathology treatment", 48, 0, 217, 13,
                  ("R47.01", "F80.1", "I69.320", "R13.12"), ("F80.81", "R48.8"), ("F80.9", "R47.89", "F88"),
                  (2, 90), ("aphasia", "dysphagia", "articulation", "plan of care", "speech pathologist"),
                  (34, 13, 1)),
    ProcedureSpec("92550", "Tympanometry", "tympanometry and reflex threshold testing", 58, 31, 213, 20,
                  ("H65.90", "H90.5", "H72.90", "H69.80"), ("H61.20", "H93.19"), ("H92.09", "H91.90", "R42.0"),
                  (1, 80), ("middle ear", "acoustic reflex", "eustachian tube", "audiology", "hearing loss"),
                  (20, 6, 1)),
)

ICD10_DESCRIPTIONS = {
    "K92.1": "melena", "D50.9": "iron deficiency anemia", "R19.5": "occult blood in stool",
    "Z86.010": "history of colonic polyps", "K59.00": "constipation", "R14.0": "abdominal distension",
    "R10.9": "abdominal pain unspecified", "K58.9": "irritable bowel syndrome", "R63.4": "abnormal weight loss",
    "S06.0X0A": "concussion", "R51.9": "headache", "G45.9": "transient ischemic attack",
    "I63.9": "cerebral infarction", "G44.209": "tension headache", "F41.1": "generalized anxiety",
    "R42": "dizziness", "H53.9": "visual disturbance", "G47.00": "insomnia",
    "J32.9": "chronic sinusitis", "S02.40XA": "maxillary fracture", "J01.90": "acute sinusitis",
    "K04.7": "periapical abscess", "J30.9": "allergic rhinitis", "R09.81": "nasal congestion",
    "J34.89": "nasal disorder", "M26.60": "temporomandibular joint disorder", "R22.0": "facial swelling",
    "G35": "multiple sclerosis", "C71.9": "malignant neoplasm of brain", "G40.909": "epilepsy",
    "R90.0": "intracranial space occupying lesion", "G43.909": "migraine", "R51.0": "headache with orthostatic component",
    "G93.40": "encephalopathy", "R41.82": "altered mental status", "F03.90": "dementia",
    "R91.1": "solitary pulmonary nodule", "C34.90": "lung cancer", "I26.99": "pulmonary embolism",
    "J84.10": "interstitial lung disease", "J20.9": "acute bronchitis", "R05.9": "cough",
    "R06.02": "shortness of breath", "R07.89": "chest pain", "J98.4": "lung disorder",
    "L54": "dorsalgia", "M51.26": "lumbar disc displacement", "M48.061": "lumbar spinal stenosis",
    "G83.4": "cauda equina syndrome", "M54.50": "acute low back pain", "S33.5XXA": "lumbar sprain",
    "M54.16": "lumbar radiculopathy", "M47.816": "lumbar spondylosis", "M99.03": "lumbar segmental dysfunction",
    "K57.92": "diverticulitis", "R10.31": "right lower quadrant pain", "C18.9": "colon cancer",
    "N20.0": "kidney stone", "R10.84": "generalized abdominal pain", "K30": "dyspepsia",
    "R19.00": "abdominal mass", "K59.09": "chronic constipation", "R93.5": "abnormal abdominal imaging",
    "Z12.31": "screening mammogram", "Z80.3": "family history of breast cancer", "Z85.3": "personal history of breast cancer",
    "R92.8": "abnormal mammogram", "N63.0": "breast lump", "N64.4": "mastodynia",
    "Z78.0": "asymptomatic menopause", "N60.19": "fibrocystic breast", "R92.2": "inconclusive mammogram",
    "R47.01": "aphasia", "F80.1": "expressive language disorder", "I69.320": "aphasia following stroke",
    "R13.12": "oropharyngeal dysphagia", "F80.81": "stuttering", "R48.8": "symbolic dysfunction",
    "F80.9": "speech disorder unspecified", "R47.89": "speech disturbance", "F88": "developmental disorder",
    "H65.90": "otitis media with effusion", "H90.5": "sensorineural hearing loss", "H72.90": "tympanic membrane perforation",
    "H69.80": "eustachian tube dysfunction", "H61.20": "impacted cerumen", "H93.19": "tinnitus",
    "H92.09": "otalgia", "H91.90": "hearing loss unspecified", "R42.0": "vertigo",
}


def describe(code: str) -> str:
    return f"{code} {ICD10_DESCRIPTIONS.get(code, '')}".strip()


IMAGING_CPTS = ("70450", "70486", "70553", "71260", "72148", "74177")
SHARED_TYPES = (16, 37, 4)  # coverage, billing, exclusion among shared chunks

# wording kept out of the policy corpus so the cue does not move retrieval rankings
DOCUMENTED_TREATMENTS = (
    "referral packet enclosed",
    "referral chart summary enclosed",
    "chart summary received",
    "referral packet received",
)
MISSING_TREATMENTS = (
    "referral packet absent",
    "chart summary outstanding",
)
# share of pend requests that still carry complete documentation
PEND_DOCUMENTED_RATE = 0.2

ADMIN_SENTENCES = (
    "Prior authorization request forms must list the procedure and diagnosis codes.",
    "Claims submitted without an ICD-10-CM diagnosis code will be returned to the provider.",
    "Documentation in the medical record must support the medical necessity of the request.",
    "Use the appropriate modifier and place of service when billing the procedure.",
    "The ordering physician must sign the request and retain clinical notes for audit.",
    "Coverage determinations apply to Medicare beneficiaries.",
    "Submit the prior authorization request with the treating diagnosis and treatment history.",
    "Frequency limitations and coding guidance are described in the billing article.",
)

NARRATIVE_SENTENCES = (
    "The treating clinician must document the history, examination and the clinical question to be answered.",
    "Repeat studies within twelve months require evidence of a new or worsening clinical presentation.",
    "Results must be expected to change management of the beneficiary.",
    "Contrast administration requires screening for renal function and prior allergic reaction.",
    "Studies ordered solely for screening purposes in asymptomatic individuals are not reasonable.",
    "The interpreting physician report must be available in the medical record.",
    "Alternative modalities should be considered when radiation exposure is a concern.",
    "Emergency department orders follow the same documentation standards as outpatient orders.",
)


# exclusion notices are short in practice; cap their boilerplate
EXCLUSION_NARRATIVE_CAP = 5


def _narrative(n: int, rng: np.random.Generator) -> str:
    if n <= 0:
        return ""
    picks = rng.choice(len(NARRATIVE_SENTENCES), size=min(n, len(NARRATIVE_SENTENCES)), replace=False)
    return " " + " ".join(NARRATIVE_SENTENCES[i] for i in sorted(picks))


@dataclass
class Chunk:
    id: int
    procedure_ids: tuple[str, ...]
    chunk_type: ChunkType
    text: str
    embedding: np.ndarray = field(repr=False)
    icd10_tags: tuple[str, ...] = ()
    age_range: tuple[int, int] | None = None

    @property
    def shared(self) -> bool:
        return len(self.procedure_ids) >= 2

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "procedure_ids": list(self.procedure_ids),
            "chunk_type": self.chunk_type.value,
            "text": self.text,
            "icd10_tags": list(self.icd10_tags),
            "age_range": list(self.age_range) if self.age_range else None,
            "embedding": [float(x) for x in self.embedding],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Chunk":
        emb = np.asarray(d["embedding"], dtype=np.float64)
        if emb.shape != (DIM,):
            raise ValueError(f"chunk {d['id']}: embedding must have {DIM} values")
        return cls(
            id=int(d["id"]),
            procedure_ids=tuple(d["procedure_ids"]),
            chunk_type=ChunkType(d["chunk_type"]),
            text=d["text"],
            embedding=emb,
            icd10_tags=tuple(d.get("icd10_tags") or ()),
            age_range=tuple(d["age_range"]) if d.get("age_range") else None,
        )


@dataclass(frozen=True)
class PARequest:
    request_id: int
    cpt: str
    icd10: str
    age: int
    ground_truth: Decision
    required_evidence: frozenset[int]
    prior_treatment: str = ""

    @property
    def text(self) -> str:
        return request_text(self.cpt, self.icd10, self.age, self.prior_treatment)

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "cpt": self.cpt,
            "icd10": self.icd10,
            "age": self.age,
            "ground_truth": self.ground_truth.value,
            "required_evidence": sorted(self.required_evidence),
            "prior_treatment": self.prior_treatment,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PARequest":
        return cls(
            request_id=int(d["request_id"]),
            cpt=d["cpt"],
            icd10=d["icd10"],
            age=int(d["age"]),
            ground_truth=Decision(d["ground_truth"]),
            required_evidence=frozenset(int(i) for i in d["required_evidence"]),
            prior_treatment=d.get("prior_treatment", ""),
        )


_PROC_BY_CPT = {p.cpt: p for p in DEFAULT_PROCEDURES}


def request_text(cpt: str, icd10: str, age: int, prior_treatment: str = "") -> str:
    text = f"Procedure CPT {cpt}. Diagnosis {describe(icd10)}. Patient age {age}."
    if prior_treatment:
        text += f" {prior_treatment.capitalize()}."
    return text


class Corpus:
    """Immutable chunk collection with a precomputed embedding matrix."""

    def __init__(self, chunks: Sequence[Chunk], procedures: Sequence[ProcedureSpec] = DEFAULT_PROCEDURES):
        ids = [c.id for c in chunks]
        if ids != list(range(len(chunks))):
            raise ValueError("chunk ids must be 0..n-1 in order")
        self.chunks = tuple(chunks)
        self.procedures = {p.cpt: p for p in procedures}
        self.embeddings = np.stack([c.embedding for c in chunks]).astype(np.float64)
        self.embeddings.setflags(write=False)
        self._norms = np.linalg.norm(self.embeddings, axis=1)

    def __len__(self) -> int:
        return len(self.chunks)

    def __getitem__(self, idx: int) -> Chunk:
        return self.chunks[idx]

    def pool(self, cpt: str) -> list[Chunk]:
        return [c for c in self.chunks if cpt in c.procedure_ids]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        qn = float(np.linalg.norm(query))
        denom = self._norms * qn
        out = np.zeros(len(self.chunks))
        ok = denom > 0
        out[ok] = (self.embeddings[ok] @ query)[ok] / denom[ok]
        return out

    def ranking(self, query: np.ndarray) -> np.ndarray:
        """Chunk ids by descending cosine, ties broken by ascending id."""
        sims = self.similarities(query)
        return np.lexsort((np.arange(len(sims)), -sims))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for c in self.chunks:
            meta = c.to_json()
            meta.pop("embedding")
            h.update(json.dumps(meta, sort_keys=True).encode())
            h.update(np.asarray(c.embedding, dtype="<f8").tobytes())
        return h.hexdigest()

    def with_embeddings(self, overrides: dict[int, np.ndarray]) -> "Corpus":
        """Copy of the corpus with some chunk embeddings replaced (external encoder vectors)."""
        chunks = []
        for c in self.chunks:
            if c.id in overrides:
                emb = np.asarray(overrides[c.id], dtype=np.float64)
                if emb.shape != (DIM,):
                    raise ValueError(f"override for chunk {c.id} must have {DIM} values")
                c = Chunk(c.id, c.procedure_ids, c.chunk_type, c.text, emb, c.icd10_tags, c.age_range)
            chunks.append(c)
        return Corpus(chunks, tuple(self.procedures.values()))

    # ------------------------------------------------------------------ io
    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for c in self.chunks:
                fh.write(json.dumps(c.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path, procedures: Sequence[ProcedureSpec] = DEFAULT_PROCEDURES) -> "Corpus":
        with open(path) as fh:
            chunks = [Chunk.from_json(json.loads(line)) for line in fh if line.strip()]
        return cls(chunks, procedures)


def load_embedding_sidecar(path: str | Path) -> dict[int, np.ndarray]:
    """Read a JSON object ``{chunk_id: [384 floats]}``."""
    with open(path) as fh:
        raw = json.load(fh)
    return {int(k): np.asarray(v, dtype=np.float64) for k, v in raw.items()}


# ---------------------------------------------------------------- building
def _shared_memberships(procedures: Sequence[ProcedureSpec], rng: np.random.Generator
                        ) -> list[tuple[ChunkType, tuple[str, ...]]]:
    n_cov, n_bill, n_excl = SHARED_TYPES
    n_shared = n_cov + n_bill + n_excl
    types = [ChunkType.EXCLUSION] * n_excl + [ChunkType.COVERAGE] * n_cov + [ChunkType.BILLING] * n_bill
    members: list[set[str]] = [set() for _ in range(n_shared)]
    demand = {p.cpt: p.shared_count for p in procedures if p.shared_count > 0}
    if not demand:
        return []
    if sum(p.shared_count > 0 for p in procedures) < 2:
        raise ValueError("shared chunks need at least two procedures with shared_count > 0")
    imaging = [c for c in IMAGING_CPTS if c in demand]
    # clinical (coverage/exclusion) shared chunks are drawn from the imaging family
    clinical_idx = [i for i, t in enumerate(types) if t is not ChunkType.BILLING]
    for i in clinical_idx:
        if len(imaging) < 2:
            types[i] = ChunkType.BILLING
    # every imaging procedure gets at least one shared exclusion chunk
    excl_idx = [i for i, t in enumerate(types) if t is ChunkType.EXCLUSION]
    for j, cpt in enumerate(imaging):
        members[excl_idx[j % len(excl_idx)]].add(cpt)
    # fill demands, largest first; prefer chunks with the fewest members so far
    for cpt in sorted(demand, key=lambda c: (-demand[c], c)):
        # exclusion notices stay narrow (two procedures) so they are not drowned out
        allowed = [i for i in range(n_shared)
                   if types[i] is ChunkType.BILLING
                   or (cpt in imaging and not (types[i] is ChunkType.EXCLUSION and len(members[i]) >= 2))]
        need = demand[cpt] - sum(cpt in m for m in members)
        cands = [i for i in allowed if cpt not in members[i]]
        if need > len(cands):
            raise ValueError(f"procedure {cpt}: shared_count {demand[cpt]} not realizable")
        jitter = rng.random(n_shared)
        cands.sort(key=lambda i: (len(members[i]), jitter[i]))
        for i in cands[:need]:
            members[i].add(cpt)
    # any chunk left with a single member takes the procedure with most slack
    for i, m in enumerate(members):
        if len(m) < 2:
            raise ValueError("shared chunk ended up with fewer than two procedures")
    return [(types[i], tuple(sorted(members[i]))) for i in range(n_shared)]


def _coverage_text(procs: Sequence[ProcedureSpec], tags: Sequence[str], age: tuple[int, int],
                   rng: np.random.Generator) -> str:
    codes = "; ".join(describe(t) for t in tags)
    if len(procs) == 1:
        p = procs[0]
        vocab = list(p.vocab)
        rng.shuffle(vocab)
        return (f"{p.name} CPT {p.cpt} coverage criteria. Covered diagnoses: {codes}. "
                f"Patients aged {age[0]} to {age[1]}. Indications include {vocab[0]} and {vocab[1]}."
                + _narrative(p.difficulty, rng))
    names = ", ".join(f"{p.alias} CPT {p.cpt}" for p in procs)
    vocab = sorted({v for p in procs for v in p.vocab})
    picks = rng.choice(len(vocab), size=min(4, len(vocab)), replace=False)
    return (f"Advanced diagnostic imaging coverage criteria for {names}. Indications include "
            f"{', '.join(vocab[i] for i in sorted(picks))}. Covered diagnoses: {codes}. "
            f"Patients aged {age[0]} to {age[1]}." + _narrative(max(p.difficulty for p in procs), rng))


def _exclusion_text(procs: Sequence[ProcedureSpec], tags: Sequence[str], rng: np.random.Generator) -> str:
    names = ", ".join(f"{p.name} CPT {p.cpt}" for p in procs)
    codes = "; ".join(describe(t) for t in tags)
    return (f"Limitations and exclusions for {names}. Not covered for diagnoses: {codes}. Such requests are denied."
            + _narrative(min(EXCLUSION_NARRATIVE_CAP, max(p.difficulty for p in procs)), rng))


def _billing_text(procs: Sequence[ProcedureSpec], rng: np.random.Generator) -> str:
    k = 2 if len(procs) == 1 else 3
    picks = sorted(rng.choice(len(ADMIN_SENTENCES), size=k, replace=False))
    admin = " ".join(ADMIN_SENTENCES[i] for i in picks)
    # billing articles list supporting diagnosis codes; shared ones mix several procedures
    listed = [p for p in procs if rng.random() < (0.9 if len(procs) == 1 else 0.6)]
    codes = [describe(c) for p in listed for c in rng.choice(p.icd10_pool, size=3, replace=False)]
    names = ", ".join(f"{p.name} CPT {p.cpt}" for p in procs)
    text = f"Billing and coding for {names}. {admin}"
    if codes:
        text += f" Diagnosis codes that support medical necessity: {'; '.join(codes)}."
    return text


def build_corpus(seed: int = 0, config: Sequence[ProcedureSpec] = DEFAULT_PROCEDURES) -> Corpus:
    """Build the synthetic corpus. Deterministic in ``seed``; counts follow ``config`` exactly."""
    for p in config:
        if p.chunk_count < p.shared_count:
            raise ValueError(f"procedure {p.cpt}: chunk_count < shared_count")
        if sum(p.own_types) != p.chunk_count - p.shared_count:
            raise ValueError(f"procedure {p.cpt}: own_types must sum to chunk_count - shared_count")
    rng = np.random.default_rng(seed)
    by_cpt = {p.cpt: p for p in config}
    specs: list[tuple[ChunkType, tuple[str, ...]]] = []
    for p in config:
        n_cov, n_bill, n_excl = p.own_types
        specs += [(ChunkType.COVERAGE, (p.cpt,))] * n_cov
        specs += [(ChunkType.BILLING, (p.cpt,))] * n_bill
        specs += [(ChunkType.EXCLUSION, (p.cpt,))] * n_excl
    specs += _shared_memberships(config, rng)

    # every procedure must be able to reach all three decisions
    for p in config:
        kinds = {t for t, m in specs if p.cpt in m}
        if ChunkType.COVERAGE not in kinds or ChunkType.EXCLUSION not in kinds:
            raise ValueError(f"procedure {p.cpt} lacks coverage or exclusion chunks")

    # assign icd tags so that every covered/excluded code is tagged somewhere
    cov_slots: dict[str, list[int]] = {p.cpt: [] for p in config}
    exc_slots: dict[str, list[int]] = {p.cpt: [] for p in config}
    for i, (t, m) in enumerate(specs):
        for cpt in m:
            if t is ChunkType.COVERAGE:
                cov_slots[cpt].append(i)
            elif t is ChunkType.EXCLUSION:
                exc_slots[cpt].append(i)
    tags: list[list[str]] = [[] for _ in specs]
    for p in config:
        for slots, codes in ((cov_slots[p.cpt], p.covered), (exc_slots[p.cpt], p.excluded)):
            # round-robin first so no code is left untagged, then pad spare slots at random
            for j, code in enumerate(codes):
                tags[slots[j % len(slots)]].append(code)
            for i in slots[len(codes):]:
                size = int(rng.integers(1, 3))
                for x in sorted(rng.choice(len(codes), size=size, replace=False)):
                    if codes[int(x)] not in tags[i]:
                        tags[i].append(codes[int(x)])

    chunks = []
    for i, (t, m) in enumerate(specs):
        procs = [by_cpt[c] for c in m]
        age = None
        if t is ChunkType.COVERAGE:
            lo = min(p.age_range[0] for p in procs)
            hi = max(p.age_range[1] for p in procs)
            if len(procs) == 1 and rng.random() < 0.5:
                span = hi - lo
                lo = lo + int(rng.integers(0, max(1, span // 4)))
            age = (lo, hi)
            text = _coverage_text(procs, tags[i], age, rng)
        elif t is ChunkType.EXCLUSION:
            text = _exclusion_text(procs, tags[i], rng)
        else:
            text = _billing_text(procs, rng)
        chunks.append(Chunk(i, tuple(m), t, text, embed_text(text), tuple(tags[i]), age))
    return Corpus(chunks, config)


# ---------------------------------------------------------------- requests
def _allocate(n: int, weights: Sequence[float]) -> list[int]:
    w = np.asarray(weights, dtype=np.float64)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.lexsort((np.arange(len(w)), -(raw - counts)))
    counts[order[:rem]] += 1
    return counts.tolist()


def _matching(corpus: Corpus, cpt: str, icd10: str, age: int, kind: ChunkType) -> list[int]:
    out = []
    for c in corpus.chunks:
        if c.chunk_type is not kind or cpt not in c.procedure_ids or icd10 not in c.icd10_tags:
            continue
        if kind is ChunkType.COVERAGE and not (c.age_range[0] <= age <= c.age_range[1]):
            continue
        out.append(c.id)
    return out


def generate_requests(
    corpus: Corpus,
    seed: int,
    n: int,
    outcome_weights: Sequence[float] = DEFAULT_OUTCOME_WEIGHTS,
    proportions: Sequence[float] | None = None,
    start_id: int = 0,
    split: str = "train",
    max_depth: int = HORIZON - 1,
) -> list[PARequest]:
    """Stratified synthetic requests whose required evidence is reachable within ``max_depth`` greedy picks."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = np.asarray(outcome_weights, dtype=np.float64)
    if w.shape != (3,) or (w < 0).any() or w.sum() <= 0:
        raise ValueError("outcome_weights must be three non-negative reals with positive sum")
    procs = list(corpus.procedures.values())
    if proportions is None:
        proportions = [p.train if split == "train" else p.test for p in procs]
    counts = _allocate(n, proportions)
    rng = np.random.default_rng(seed)
    slots = [p for p, k in zip(procs, counts) for _ in range(k)]
    order = rng.permutation(len(slots))
    out = []
    for j, idx in enumerate(order):
        p = slots[idx]
        outcome = DECISIONS[int(rng.choice(3, p=w / w.sum()))]
        out.append(_sample_request(corpus, p, outcome, start_id + j, rng, max_depth))
    return out


def _sample_request(corpus: Corpus, p: ProcedureSpec, outcome: Decision, rid: int,
                    rng: np.random.Generator, max_depth: int) -> PARequest:
    lo, hi = p.age_range
    for _ in range(1000):
        age = int(rng.integers(lo, hi + 1))
        if outcome is Decision.PEND:
            icd = p.unlisted[int(rng.integers(len(p.unlisted)))]
            documented = rng.random() < PEND_DOCUMENTED_RATE
        else:
            codes = p.covered if outcome is Decision.APPROVE else p.excluded
            icd = codes[int(rng.integers(len(codes)))]
            documented = True
        pool = DOCUMENTED_TREATMENTS if documented else MISSING_TREATMENTS
        treatment = pool[int(rng.integers(len(pool)))]
        query = embed_text(request_text(p.cpt, icd, age, treatment))
        rank = {int(cid): r for r, cid in enumerate(corpus.ranking(query))}
        if outcome is Decision.PEND:
            # pended for documentation: anchored to the best-ranked chunk of the procedure's pool
            cands = [c.id for c in corpus.pool(p.cpt) if c.chunk_type is not ChunkType.EXCLUSION]
        else:
            kind = ChunkType.COVERAGE if outcome is Decision.APPROVE else ChunkType.EXCLUSION
            cands = _matching(corpus, p.cpt, icd, age, kind)
        if not cands:
            continue
        best = min(cands, key=lambda c: (rank[c], c))
        if rank[best] >= max_depth:
            continue
        return PARequest(rid, p.cpt, icd, age, outcome, frozenset([best]), treatment)
    raise RuntimeError(f"could not sample a consistent {outcome.value} request for {p.cpt}")


# ---------------------------------------------------------------- oracle
def oracle_decide(corpus: Corpus, request: PARequest, evidence: Iterable[int]) -> Decision:
    """Decide ``request`` from the retrieved chunk ids only."""
    ev = set(evidence)
    n = len(corpus)
    for cid in ev:
        if not 0 <= cid < n:
            raise KeyError(f"unknown chunk id {cid}")
    if request.required_evidence <= ev:
        return request.ground_truth
    chunks = [corpus[c] for c in sorted(ev) if request.cpt in corpus[c].procedure_ids]
    for c in chunks:
        if c.chunk_type is ChunkType.EXCLUSION and request.icd10 in c.icd10_tags:
            return Decision.DENY
    for c in chunks:
        if (c.chunk_type is ChunkType.COVERAGE and request.icd10 in c.icd10_tags
                and c.age_range[0] <= request.age <= c.age_range[1]):
            return Decision.APPROVE
    return Decision.PEND


def save_requests(requests: Sequence[PARequest], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in requests:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_requests(path: str | Path) -> list[PARequest]:
    with open(path) as fh:
        return [PARequest.from_json(json.loads(line)) for line in fh if line.strip()]
