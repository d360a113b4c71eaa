"""Seeded synthetic longitudinal data with planted ADRs.

The generator models the temporal structure the detection algorithms rely
on: planted ADRs raise an event's daily rate only in a window after each
prescription, indication events tend to precede prescriptions and are
mostly recorded again after them by patients who had them before, chronic conditions produce bursts of records right after
registration, and administrative codes are frequent noise.

Every event process is a per-day Bernoulli draw with a fixed daily
probability; a day either has a given code or not.  All dates use a fixed
365-day year counted from ``start_date``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError
from .store import EventDatabase, all_eras

log = logging.getLogger(__name__)

RARE_INCIDENCE = 1 / 1000
COMMON_INCIDENCE = 1 / 100
_EPOCH_ORDINAL = 719163  # date(1970, 1, 1).toordinal()


@dataclass(frozen=True)
class DrugSpec:
    code: str
    exposure: float = 0.1
    indications: tuple[str, ...] = ()
    indication_rate: float = 0.0
    indication_followup: float = 0.0  # recurrence after the prescription given a prior record
    indication_followup_new: float = 0.0  # record after the prescription without a prior one
    indication_lead_days: int = 30
    repeat_probability: float = 0.3
    consult_codes: tuple[str, ...] = ()  # recorded at the prescribing consultation (day 0)
    consult_rate: float = 0.0


@dataclass(frozen=True)
class PlantedAdr:
    drug_code: str
    event_code: str
    relative_risk: float = 10.0
    background_rate: float = 0.001
    onset: tuple[int, int] = (1, 30)

    @property
    def window_days(self) -> int:
        return self.onset[1] - self.onset[0] + 1

    @property
    def excess_incidence(self) -> float:
        """Extra probability of the event in one exposure's onset window."""
        n = self.window_days
        return (1 - self.background_rate) ** n - (1 - self.background_rate * self.relative_risk) ** n

    @property
    def frequency_class(self) -> str:
        if self.excess_incidence < RARE_INCIDENCE:
            return "rare"
        if self.excess_incidence < COMMON_INCIDENCE:
            return "less_common"
        return "common"


def _default_drugs():
    return (DrugSpec("DRUG01", 0.1, ("IND01",), 0.6, 1.0, 0.15),)


def _default_adrs():
    return (PlantedAdr("DRUG01", "ADR01", 10.0, 0.001),)


@dataclass(frozen=True)
class GeneratorConfig:
    rng_seed: int = 0
    n_patients: int = 1000
    observation_years: int = 8
    start_date: date = date(2000, 1, 1)
    birth_year_range: tuple[int, int] = (1930, 1990)
    death_probability: float = 0.05
    n_event_codes: int = 50
    background_rate_range: tuple[float, float] = (5e-5, 1e-3)
    n_background_drugs: int = 8
    background_exposure: float = 0.2
    n_chronic_codes: int = 4
    n_cancer_codes: int = 2
    n_admin_codes: int = 3
    chronic_prevalence: float = 0.1
    chronic_rate: float = 0.01
    registration_drop_probability: float = 0.5
    cancer_rate: float = 5e-5
    admin_rate: float = 0.003
    indication_background_rate: float = 2e-4
    drugs: tuple[DrugSpec, ...] = field(default_factory=_default_drugs)
    adrs: tuple[PlantedAdr, ...] = field(default_factory=_default_adrs)

    @property
    def span_days(self) -> int:
        return self.observation_years * 365

    def validate(self) -> None:
        probs = {
            "death_probability": self.death_probability,
            "background_exposure": self.background_exposure,
            "chronic_prevalence": self.chronic_prevalence,
            "chronic_rate": self.chronic_rate,
            "registration_drop_probability": self.registration_drop_probability,
            "cancer_rate": self.cancer_rate,
            "admin_rate": self.admin_rate,
            "indication_background_rate": self.indication_background_rate,
            "background_rate_range": min(self.background_rate_range),
            "background_rate_range max": max(self.background_rate_range),
        }
        for d in self.drugs:
            probs.update({
                f"{d.code} exposure": d.exposure,
                f"{d.code} indication_rate": d.indication_rate,
                f"{d.code} indication_followup": d.indication_followup,
                f"{d.code} indication_followup_new": d.indication_followup_new,
                f"{d.code} repeat_probability": d.repeat_probability,
                f"{d.code} consult_rate": d.consult_rate,
            })
        for name, p in probs.items():
            if not 0 <= p <= 1:
                raise ConfigError(f"{name} must be a probability, got {p}")
        if self.n_patients <= 0:
            raise ConfigError("n_patients must be positive")
        if self.birth_year_range[0] > self.birth_year_range[1]:
            raise ConfigError("birth_year_range is reversed")
        if self.birth_year_range[1] > self.start_date.year:
            raise ConfigError("patients must be born before the registration period starts")
        lead = max((d.indication_lead_days for d in self.drugs), default=0)
        if self.span_days < 365 + lead + 90:
            raise ConfigError(f"observation of {self.observation_years} years is too short to place prescriptions")
        drug_codes = {d.code for d in self.drugs}
        for a in self.adrs:
            if a.drug_code not in drug_codes:
                raise ConfigError(f"planted ADR refers to undeclared drug {a.drug_code}")
            if a.relative_risk < 1:
                raise ConfigError(f"relative risk of {a.event_code} must be >= 1")
            if not 0 <= a.onset[0] <= a.onset[1] <= 30:
                raise ConfigError(f"onset window {a.onset} of {a.event_code} must lie within [0, 30]")
            if not 0 <= a.background_rate <= 1 or a.background_rate * a.relative_risk > 1:
                raise ConfigError(
                    f"daily rate of {a.event_code} under exposure ({a.background_rate} x {a.relative_risk}) exceeds 1"
                )


# ---------------------------------------------------------------- config file
def _number(value: str):
    try:
        return int(value)
    except ValueError:
        return float(value)


def _pair(value: str, cast=_number):
    parts = value.replace("-", " ").replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"expected two values, got {value!r}")
    return cast(parts[0]), cast(parts[1])


_SCALARS = {
    "seed": "rng_seed", "rng_seed": "rng_seed", "n_patients": "n_patients",
    "observation_years": "observation_years", "death_probability": "death_probability",
    "n_event_codes": "n_event_codes", "n_background_drugs": "n_background_drugs",
    "background_exposure": "background_exposure", "n_chronic_codes": "n_chronic_codes",
    "n_cancer_codes": "n_cancer_codes", "n_admin_codes": "n_admin_codes",
    "chronic_prevalence": "chronic_prevalence", "chronic_rate": "chronic_rate",
    "registration_drop_probability": "registration_drop_probability",
    "cancer_rate": "cancer_rate", "admin_rate": "admin_rate",
    "indication_background_rate": "indication_background_rate",
}


def _options(tokens: list[str]) -> dict[str, str]:
    out = {}
    for token in tokens:
        if "=" not in token:
            raise ConfigError(f"expected key=value, got {token!r}")
        k, v = token.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_config(text: str) -> GeneratorConfig:
    """Parse ``key = value`` lines; ``drug`` and ``adr`` lines may repeat.

    ``drug = CODE exposure=0.1 indication=IND01 indication_rate=0.3 indication_followup=0.8
    indication_followup_new=0.1 repeat=0.3 consult=CON01,CON02 consult_rate=0.2`` (one line)
    ``adr = DRUG EVENT rr=10 rate=0.001 onset=1-30``
    """
    kwargs: dict = {}
    drugs, adrs = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _SCALARS:
                kwargs[_SCALARS[key]] = _number(value)
            elif key == "start_date":
                kwargs["start_date"] = date.fromisoformat(value)
            elif key == "birth_year_range":
                kwargs["birth_year_range"] = _pair(value, int)
            elif key == "background_rate_range":
                kwargs["background_rate_range"] = tuple(float(v) for v in value.replace(",", " ").split())
            elif key == "drug":
                code, *rest = value.split()
                opts = _options(rest)
                indications = tuple(filter(None, opts.pop("indication", "").split(",")))
                drugs.append(DrugSpec(
                    code,
                    float(opts.pop("exposure", 0.1)),
                    indications,
                    float(opts.pop("indication_rate", 0.0)),
                    float(opts.pop("indication_followup", 0.0)),
                    float(opts.pop("indication_followup_new", 0.0)),
                    int(opts.pop("indication_lead", 30)),
                    float(opts.pop("repeat", 0.3)),
                    tuple(filter(None, opts.pop("consult", "").split(","))),
                    float(opts.pop("consult_rate", 0.0)),
                ))
                if opts:
                    raise ConfigError(f"unknown drug options {sorted(opts)}")
            elif key == "adr":
                drug, event, *rest = value.split()
                opts = _options(rest)
                adrs.append(PlantedAdr(
                    drug, event,
                    float(opts.pop("rr", 10.0)),
                    float(opts.pop("rate", 0.001)),
                    _pair(opts.pop("onset", "1-30"), int),
                ))
                if opts:
                    raise ConfigError(f"unknown adr options {sorted(opts)}")
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if drugs:
        kwargs["drugs"] = tuple(drugs)
        kwargs["adrs"] = tuple(adrs)
    elif adrs:
        kwargs["adrs"] = tuple(adrs)
    config = GeneratorConfig(**kwargs)
    config.validate()
    return config


def load_config(path) -> GeneratorConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------- sampling
def bernoulli_days(rng: np.random.Generator, lo, hi, p) -> tuple[np.ndarray, np.ndarray]:
    """Days in each inclusive interval [lo, hi] on which a daily Bernoulli(p) fires.

    Sampled exactly through geometric gaps between successes.  Returns
    (interval index, day) pairs.
    """
    lo, hi = np.asarray(lo, dtype=np.int64), np.asarray(hi, dtype=np.int64)
    p = np.broadcast_to(np.asarray(p, dtype=float), lo.shape)
    live = np.flatnonzero((p > 0) & (hi >= lo))
    pos = lo[live] - 1
    out_i, out_d = [], []
    while len(live):
        pos = pos + rng.geometric(p[live])
        ok = pos <= hi[live]
        live, pos = live[ok], pos[ok]
        out_i.append(live)
        out_d.append(pos)
    if not out_i:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out_i), np.concatenate(out_d)


def _merge_intervals(owner, lo, hi):
    """Union of inclusive intervals per owner."""
    keep = hi >= lo
    owner, lo, hi = owner[keep], lo[keep], hi[keep]
    if len(owner) == 0:
        return owner, lo, hi
    order = np.lexsort((lo, owner))
    owner, lo, hi = owner[order], lo[order], hi[order]
    base = int(lo.min())
    big = int(hi.max()) - base + 1
    # owners ascend, so a global running max of the offset key is a per-owner one
    running = np.maximum.accumulate(owner * big + (hi - base)) - owner * big + base
    new = np.r_[True, (owner[1:] != owner[:-1]) | (lo[1:] > running[:-1])]
    group = np.cumsum(new) - 1
    merged_hi = np.zeros(group[-1] + 1, dtype=np.int64)
    np.maximum.at(merged_hi, group, hi)
    return owner[new], lo[new], merged_hi


def _iso(ordinals: np.ndarray) -> np.ndarray:
    return (np.asarray(ordinals, dtype=np.int64) - _EPOCH_ORDINAL).astype("datetime64[D]").astype(str)


@dataclass
class SyntheticData:
    patients: pd.DataFrame
    prescriptions: pd.DataFrame
    events: pd.DataFrame
    exclusions: pd.DataFrame
    ground_truth: pd.DataFrame

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("patients", "prescriptions", "events", "exclusions", "ground_truth"):
            getattr(self, name).to_csv(directory / f"{name}.csv", index=False, lineterminator="\n")
        return directory


def synthesize(config: GeneratorConfig) -> SyntheticData:
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    n = config.n_patients
    base = config.start_date.toordinal()

    # registration spread over two years; observation truncated by death
    reg = base + rng.integers(0, 730, size=n)
    end = reg + config.span_days - 1
    dies = rng.random(n) < config.death_probability
    death = np.where(dies, reg + 365 + rng.integers(0, config.span_days - 365, size=n), -1)
    end = np.where(dies, death, end)
    yob = rng.integers(config.birth_year_range[0], config.birth_year_range[1] + 1, size=n)
    gender = np.where(rng.random(n) < 0.5, "male", "female")

    ev_p, ev_c, ev_d = [], [], []

    def add_events(patients, code, days):
        ev_p.append(np.asarray(patients, dtype=np.int64))
        ev_d.append(np.asarray(days, dtype=np.int64))
        ev_c.append(np.full(len(patients), code, dtype=object))

    # prescriptions
    rx_p, rx_c, rx_d = [], [], []
    lead = max((d.indication_lead_days for d in config.drugs), default=30)
    first_lo, first_hi = reg + 365 + lead, end - 60
    background = tuple(
        DrugSpec(f"BG{i + 1:02d}", config.background_exposure) for i in range(config.n_background_drugs)
    )
    exposures: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for spec in config.drugs + background:
        users = np.flatnonzero((rng.random(n) < spec.exposure) & (first_hi >= first_lo))
        first = first_lo[users] + (rng.random(len(users)) * (first_hi[users] - first_lo[users] + 1)).astype(np.int64)
        repeat = rng.random(len(users)) < spec.repeat_probability
        gap = rng.integers(7, 29, size=len(users))
        p = np.r_[users, users[repeat]]
        d = np.r_[first, first[repeat] + gap[repeat]]
        rx_p.append(p)
        rx_d.append(d)
        rx_c.append(np.full(len(p), spec.code, dtype=object))
        exposures[spec.code] = (p, d)
        for code in spec.indications:
            pre = rng.random(len(users)) < spec.indication_rate
            add_events(users[pre], code, first[pre] - rng.integers(1, spec.indication_lead_days + 1, size=int(pre.sum())))
            followup = np.where(pre, spec.indication_followup, spec.indication_followup_new)
            post = rng.random(len(users)) < followup
            add_events(users[post], code, first[post] + rng.integers(1, 31, size=int(post.sum())))
        for code in spec.consult_codes:
            hit = rng.random(len(p)) < spec.consult_rate
            add_events(p[hit], code, d[hit])

    # background rates per code
    adr_rates: dict[str, float] = {}
    for a in config.adrs:
        adr_rates.setdefault(a.event_code, a.background_rate)
    lo_rate, hi_rate = config.background_rate_range
    noise_codes = [f"E{i + 1:03d}" for i in range(config.n_event_codes)]
    noise_rates = np.exp(rng.uniform(math.log(max(lo_rate, 1e-12)), math.log(max(hi_rate, 1e-12)), size=len(noise_codes)))
    rates = dict(zip(noise_codes, noise_rates.tolist()))
    for spec in config.drugs:
        for code in spec.indications + spec.consult_codes:
            rates.setdefault(code, config.indication_background_rate)
    rates.update(adr_rates)
    for code in sorted(rates):
        i, day = bernoulli_days(rng, reg, end, rates[code])
        add_events(i, code, day)

    # planted ADRs: extra process inside merged onset windows so the union
    # fires with probability background * relative_risk per day
    for a in config.adrs:
        p, d = exposures[a.drug_code]
        owner, lo, hi = _merge_intervals(p, d + a.onset[0], np.minimum(d + a.onset[1], end[p]))
        bg = adr_rates[a.event_code]
        extra = (bg * a.relative_risk - bg) / (1 - bg) if bg < 1 else 0.0
        i, day = bernoulli_days(rng, lo, hi, extra)
        add_events(owner[i], a.event_code, day)

    # chronic conditions, including records dropped in at registration
    exclusions = []
    for k in range(config.n_chronic_codes):
        code = f"CH{k + 1:03d}"
        exclusions.append((code, "chronic"))
        has = np.flatnonzero(rng.random(n) < config.chronic_prevalence)
        prior = rng.random(len(has)) < config.registration_drop_probability
        onset = np.where(prior, reg[has], reg[has] + rng.integers(0, config.span_days, size=len(has)))
        i, day = bernoulli_days(rng, onset, end[has], config.chronic_rate)
        add_events(has[i], code, day)
        dropped = has[prior]
        add_events(dropped, code, reg[dropped] + rng.integers(0, 30, size=len(dropped)))
    for k in range(config.n_cancer_codes):
        code = f"CA{k + 1:03d}"
        exclusions.append((code, "cancer"))
        i, day = bernoulli_days(rng, reg, end, config.cancer_rate)
        add_events(i, code, day)
    for k in range(config.n_admin_codes):
        code = f"AD{k + 1:03d}"
        exclusions.append((code, "admin"))
        i, day = bernoulli_days(rng, reg, end, config.admin_rate)
        add_events(i, code, day)

    patient_ids = np.array([f"P{i + 1:07d}" for i in range(n)], dtype=object)
    patients = pd.DataFrame({
        "patient_id": patient_ids,
        "year_of_birth": yob,
        "gender": gender,
        "registration_date": _iso(reg),
        "death_date": np.where(death > 0, _iso(np.maximum(death, 1)), ""),
    })

    def table(p, c, d, code_col):
        p, c, d = np.concatenate(p), np.concatenate(c), np.concatenate(d)
        keep = (d >= reg[p]) & (d <= end[p])
        frame = pd.DataFrame({"p": p[keep], code_col: c[keep].astype(str), "d": d[keep]})
        frame = frame.drop_duplicates().sort_values(["p", "d", code_col], kind="mergesort")
        return pd.DataFrame({
            "patient_id": patient_ids[frame["p"].to_numpy()],
            code_col: frame[code_col].to_numpy(),
            "date": _iso(frame["d"].to_numpy()),
        })

    truth = pd.DataFrame(
        sorted({(a.drug_code, a.event_code, a.frequency_class) for a in config.adrs}),
        columns=["drug_code", "event_code", "frequency"],
    ).drop_duplicates(["drug_code", "event_code"])
    data = SyntheticData(
        patients,
        table(rx_p, rx_c, rx_d, "drug_code"),
        table(ev_p, ev_c, ev_d, "event_code"),
        pd.DataFrame(exclusions, columns=["event_code", "reason"]),
        truth,
    )
    log.info("generated %d patients, %d prescriptions, %d events", n, len(data.prescriptions), len(data.events))
    return data


def generate(config: GeneratorConfig, out_dir) -> Path:
    """Write patients/prescriptions/events/exclusions/ground_truth CSVs."""
    return synthesize(config).write(out_dir)


# ---------------------------------------------------------------- summary
def describe(db: EventDatabase, drug_codes=None) -> dict[str, dict]:
    """Per drug: first-in-13-months era count, mean age at era, male proportion."""
    patient, drug, day = all_eras(db)
    codes = list(db.drug_codes) if drug_codes is None else list(drug_codes)
    out = {}
    for code in codes:
        d = db.drug_id(code)
        mask = drug == d if d is not None else np.zeros(len(drug), dtype=bool)
        p = patient[mask]
        if len(p) == 0:
            out[code] = {"total": 0, "mean_age": None, "male_proportion": None}
            continue
        years = np.array([date.fromordinal(int(x)).year for x in day[mask]])
        out[code] = {
            "total": int(len(p)),
            "mean_age": float(np.mean(years - db.year_of_birth[p])),
            "male_proportion": float(np.mean(db.gender[p] == "male")),
        }
    return out
