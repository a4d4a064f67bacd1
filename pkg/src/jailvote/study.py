"""Study designs over the linked sample.

Treatment: booking entry inside a state's voting days, on or after the
cutoff Election Day - T days. Control: entry in the first `control_days`
days after Election Day. Turnout models absorb jail and ISO-week fixed
effects and cluster two ways on the same dimensions.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Sequence

import duckdb
import numpy as np
import pandas as pd

from .config import ELECTION_DAY, PLACEBO_ELECTION_DAYS, StudyConfig
from .econometrics import (
    BalanceResult,
    EffectEstimate,
    RegressionSpec,
    balance_test,
    fit,
)
from .errors import EconometricsError, EmptySampleError
from .roster import CHARGE_SEVERITY
from .voting_calendar import VotingCalendar, state_for_fips
from .worker import run_pool

logger = logging.getLogger(__name__)

# criminal_traffic is the omitted top-charge category
TOP_CHARGE_INDICATORS = [c for c in CHARGE_SEVERITY if c != "criminal_traffic"]

COVARIATES = [
    "age", "black", "white", "male", "democrat", "republican", "charge_count",
    *TOP_CHARGE_INDICATORS,
]

# Booking-side covariates for samples that include unregistered people.
BOOKING_COVARIATES = ["age", "male", "black", "white", "charge_count", *TOP_CHARGE_INDICATORS]

TREATMENTS = ("confined", "proportion")
JAIL = "facility_id"
WEEK = "week"
# registration counts only links this sure, whatever the sample threshold
REGISTRATION_THRESHOLD = 0.95


@dataclass(frozen=True)
class StudyDesign:
    control_days: int
    treatment_days: int
    threshold: float = 0.75
    sample_kind: str = "registered_only"   # or "all_individuals"

    @property
    def label(self) -> str:
        return f"c{self.control_days}_t{self.treatment_days}"


@dataclass
class DesignEstimate:
    """An EffectEstimate with the design context it was produced under."""
    table: str
    design: StudyDesign
    outcome: str
    covariates: bool
    estimate: EffectEstimate

    def row(self) -> dict:
        e = self.estimate
        clusters = list(e.n_clusters) + [None, None]
        return {
            "table": self.table, "spec_id": e.spec_id, "sample": self.design.sample_kind,
            "threshold": self.design.threshold, "control_days": self.design.control_days,
            "treatment_days": self.design.treatment_days, "outcome": self.outcome,
            "term": e.term, "covariates": self.covariates, "coef": e.coef, "se": e.se,
            "t": e.t, "p": e.p, "df": e.df, "stars": e.stars, "n_obs": e.n_obs,
            "n_clusters_1": clusters[0], "n_clusters_2": clusters[1],
            "mean_control_outcome": e.mean_control_outcome,
        }


def iso_week(day: date) -> str:
    year, week, _ = day.isocalendar()
    return f"{year}-W{week:02d}"


def _indicator(values: pd.Series, positive: str, known: Sequence[str]) -> pd.Series:
    out = pd.Series(np.nan, index=values.index)
    mask = values.isin(known)
    out[mask] = (values[mask] == positive).astype(float)
    return out


def _exposure(frame: pd.DataFrame, calendar: VotingCalendar) -> tuple[list, list, list]:
    first_day, confined, proportion = [], [], []
    for fips, entry, exit in zip(frame["fips"], frame["entry_date"], frame["exit_date"]):
        window = calendar.window_for_fips(fips)
        days = window.overlap_days(entry, exit if pd.notna(exit) else None)
        first_day.append(window.first_voting_day)
        confined.append(float(days > 0))
        proportion.append(min(1.0, days / window.n_voting_days))
    return first_day, confined, proportion


def _charge_columns(frame: pd.DataFrame) -> pd.DataFrame:
    for c in TOP_CHARGE_INDICATORS:
        frame[c] = (frame["top_charge"] == c).astype(float)
    frame["charge_count"] = frame["charge_count"].astype(float)
    return frame


def build_analysis_frame(linked: pd.DataFrame, calendar: VotingCalendar) -> pd.DataFrame:
    """Covariates, treatment variables and week keys for linked records."""
    frame = linked.copy()
    if frame.empty:
        return frame.assign(**{c: pd.Series(dtype=float) for c in
                               [*COVARIATES, *TREATMENTS, "voted_2020", "voted_2016", "voted_2012"]},
                            week=pd.Series(dtype=object), state=pd.Series(dtype=object),
                            first_voting_day=pd.Series(dtype=object))
    frame["state"] = [state_for_fips(f) for f in frame["fips"]]
    frame["first_voting_day"], frame["confined"], frame["proportion"] = _exposure(frame, calendar)
    frame[WEEK] = [iso_week(d) for d in frame["entry_date"]]
    frame["age"] = frame["voter_age"].astype(float)
    frame["black"] = _indicator(frame["race"], "Black", ["white", "Black", "other"])
    frame["white"] = _indicator(frame["race"], "white", ["white", "Black", "other"])
    gender = frame["gender"].where(frame["gender"] != "unknown", frame["booking_gender"])
    frame["male"] = _indicator(gender, "male", ["male", "female"])
    frame["democrat"] = _indicator(frame["party"], "Dem", ["Dem", "Rep", "other"])
    frame["republican"] = _indicator(frame["party"], "Rep", ["Dem", "Rep", "other"])
    _charge_columns(frame)
    for col in ("voted_2020", "voted_2016", "voted_2012"):
        frame[col] = frame[col].astype(float)
    return frame.sort_values("booking_id", kind="mergesort").reset_index(drop=True)


def select_design(frame: pd.DataFrame, design: StudyDesign,
                  election_day: date = ELECTION_DAY) -> pd.DataFrame:
    """Rows booked in the design's treatment or control window, `treated` set."""
    if frame.empty:
        return frame.assign(treated=pd.Series(dtype=float))
    cutoff = election_day - timedelta(days=design.treatment_days)
    entry = frame["entry_date"]
    starts = frame["first_voting_day"].where(frame["first_voting_day"] > cutoff, cutoff)
    treat = (entry >= starts) & (entry <= election_day)
    control = (entry > election_day) & (entry <= election_day + timedelta(days=design.control_days))
    keep = (treat | control) & frame["charges_reported"].astype(bool)
    if design.sample_kind == "registered_only" and "registration_date" in frame:
        reg = frame["registration_date"]
        keep &= reg.isna() | (reg <= election_day)
    out = frame.loc[keep].copy()
    out["treated"] = treat[keep].astype(float)
    return out


@dataclass
class WindowSearchResult:
    control_days: int
    treatment_days: int | None        # None: no balanced window
    pcurve: list[dict] = field(default_factory=list)

    @property
    def balanced(self) -> bool:
        return self.treatment_days is not None


def window_search(frame: pd.DataFrame, control_days: int, calendar: VotingCalendar,
                  config: StudyConfig | None = None, threshold: float = 0.75,
                  threads: int = 1, max_days: int | None = None,
                  covariates: Sequence[str] = COVARIATES,
                  sample_kind: str = "registered_only") -> WindowSearchResult:
    """Largest treatment window T whose balance test, and that of every
    smaller window down to the minimum, has joint p above alpha."""
    config = config or StudyConfig(control_days=control_days)
    max_days = max_days or calendar.max_voting_days
    lengths = list(range(config.min_treatment_days, max_days + 1))

    def _one(t: int) -> dict:
        design = StudyDesign(control_days, t, threshold, sample_kind)
        sample = select_design(frame, design)
        try:
            bal = balance_test(sample, covariates, cluster_robust=config.cluster_robust_joint,
                               spec_id=f"balance_{design.label}")
            return {"treatment_days": t, "joint_f": bal.joint_f, "joint_p": bal.joint_p,
                    "n_obs": bal.n_obs}
        except (EconometricsError, EmptySampleError, ValueError, np.linalg.LinAlgError) as e:
            logger.warning("balance test failed for %s: %s", design.label, e)
            return {"treatment_days": t, "joint_f": float("nan"), "joint_p": float("nan"),
                    "n_obs": len(sample)}

    curve = run_pool(lengths, _one, threads, description=f"Balance tests (control {control_days}d)")
    best = None
    for point in curve:
        if not point["joint_p"] > config.balance_alpha:
            break
        best = point["treatment_days"]
    for point in curve:
        point.update(threshold=threshold, control_days=control_days,
                     admissible=best is not None and point["treatment_days"] <= best)
    if best is None:
        logger.warning("no balanced window for control %dd", control_days)
    return WindowSearchResult(control_days, best, curve)


def balance_for_design(frame: pd.DataFrame, design: StudyDesign,
                       config: StudyConfig | None = None,
                       covariates: Sequence[str] = COVARIATES) -> BalanceResult:
    config = config or StudyConfig()
    sample = select_design(frame, design)
    return balance_test(sample, covariates, cluster_robust=config.cluster_robust_joint,
                        spec_id=f"balance_{design.label}")


def balance_rows(result: BalanceResult, design: StudyDesign) -> list[dict]:
    """Result rows for one balance test: one per covariate plus the joint F
    (term "joint_wald", coef = F statistic)."""
    rows = [DesignEstimate("balance", design, "treated", True, e).row() for e in result.estimates]
    df = result.estimates[0].df if result.estimates else None
    joint = EffectEstimate(
        term="joint_wald", spec_id=f"balance_{design.label}", coef=result.joint_f,
        se=float("nan"), t=float("nan"), p=result.joint_p, df=df, n_obs=result.n_obs,
        n_clusters=result.estimates[0].n_clusters if result.estimates else (),
    )
    rows.append(DesignEstimate("balance", design, "treated", True, joint).row())
    return rows


def window_rows(results: Sequence[WindowSearchResult], threshold: float) -> list[dict]:
    """One row per control window: the chosen T and its joint p."""
    out = []
    for r in results:
        p = next((pt["joint_p"] for pt in r.pcurve if pt["treatment_days"] == r.treatment_days),
                 float("nan"))
        out.append({"threshold": threshold, "control_days": r.control_days,
                    "treatment_days": r.treatment_days, "balanced": r.balanced, "joint_p": p})
    return out


def balanced_designs(windows: pd.DataFrame, threshold: float,
                     control_days: int | None = None) -> list[StudyDesign]:
    """Designs for every balanced control window in a windows table."""
    rows = windows[windows["balanced"].astype(bool)]
    if control_days is not None:
        rows = rows[rows["control_days"] == control_days]
    return [StudyDesign(int(c), int(t), threshold)
            for c, t in zip(rows["control_days"], rows["treatment_days"])]


def _control_mean(sample: pd.DataFrame, outcome: str, used_index) -> float:
    rows = sample.loc[used_index]
    control = rows.loc[rows["treated"] == 0, outcome]
    return float(control.mean()) if len(control) else float("nan")


def _four_regressions(sample: pd.DataFrame, design: StudyDesign, table: str, outcome: str,
                      covariates: Sequence[str]) -> list[DesignEstimate]:
    out = []
    for treatment in TREATMENTS:
        for with_cov in (False, True):
            spec = RegressionSpec(
                outcome=outcome, treatments=[treatment],
                covariates=list(covariates) if with_cov else [],
                fixed_effects=[JAIL, WEEK], clusters=[JAIL, WEEK],
                spec_id=f"{table}_{design.label}_{outcome}_{treatment}_{'cov' if with_cov else 'nocov'}",
            )
            result = fit(sample, spec)
            mean = _control_mean(sample, outcome, result.fit.data.index)
            out.append(DesignEstimate(table, design, outcome, with_cov,
                                      result.estimate(treatment, mean)))
    return out


def estimate_effects(frame: pd.DataFrame, design: StudyDesign) -> list[DesignEstimate]:
    """Binary and proportion treatments, each with and without covariates."""
    sample = select_design(frame, design)
    if sample.empty:
        raise EmptySampleError(f"no bookings in design {design.label}")
    return _four_regressions(sample, design, "turnout", "voted_2020", COVARIATES)


def placebo_test(frame: pd.DataFrame, design: StudyDesign, placebo_year: int) -> list[DesignEstimate]:
    """Placebo-year and 2020 turnout on the binary treatment among people
    registered by the placebo election; jail FE and jail clusters."""
    placebo_day = PLACEBO_ELECTION_DAYS[placebo_year]
    sample = select_design(frame, design)
    sample = sample[sample["registration_date"].notna() & (sample["registration_date"] <= placebo_day)]
    if sample.empty:
        raise EmptySampleError(f"no voters registered by {placebo_day.isoformat()}")
    out = []
    for outcome in (f"voted_{placebo_year}", "voted_2020"):
        spec = RegressionSpec(
            outcome=outcome, treatments=["confined"], fixed_effects=[JAIL], clusters=[JAIL],
            spec_id=f"placebo{placebo_year}_{design.label}_{outcome}",
        )
        result = fit(sample, spec)
        mean = _control_mean(sample, outcome, result.fit.data.index)
        out.append(DesignEstimate(f"placebo_{placebo_year}", design, outcome, False,
                                  result.estimate("confined", mean)))
    return out


@dataclass
class HeterogeneityResult:
    estimates: list[DesignEstimate]
    race_summary: list[dict]


def heterogeneity(frame: pd.DataFrame, design: StudyDesign,
                  race_reported_only: bool = False) -> HeterogeneityResult:
    """Treatments interacted with a Black indicator (white = reference)."""
    sample = select_design(frame, design)
    sample = sample[sample["race"].isin(["white", "Black"])].copy()
    if race_reported_only:
        sample = sample[sample["race_reported"].astype(bool)]
    for race in ("white", "Black"):
        for treated in (0.0, 1.0):
            if not ((sample["race"] == race) & (sample["treated"] == treated)).any():
                raise EmptySampleError(f"empty cell: race={race} treated={int(treated)}")

    table = "race_reporting" if race_reported_only else "race"
    # white is collinear with black once the sample is two races
    covariates = [c for c in COVARIATES if c != "white"]
    estimates = []
    for treatment in TREATMENTS:
        interaction = f"{treatment}_x_black"
        sample[interaction] = sample[treatment] * sample["black"]
        spec = RegressionSpec(
            outcome="voted_2020", treatments=[treatment, interaction], covariates=covariates,
            fixed_effects=[JAIL, WEEK], clusters=[JAIL, WEEK],
            spec_id=f"{table}_{design.label}_{treatment}",
        )
        result = fit(sample, spec)
        mean = _control_mean(sample, "voted_2020", result.fit.data.index)
        for term in (treatment, interaction):
            estimates.append(DesignEstimate(table, design, "voted_2020", True,
                                            result.estimate(term, mean)))

    summary = []
    for race in ("white", "Black"):
        rows = sample[sample["race"] == race]
        summary.append({
            "race": race,
            "n": int(len(rows)),
            "control_turnout": float(rows.loc[rows["treated"] == 0, "voted_2020"].mean()),
            "mean_proportion_treated": float(rows.loc[rows["treated"] == 1, "proportion"].mean()),
        })
    return HeterogeneityResult(estimates, summary)


def build_booking_frame(spells: pd.DataFrame, linked: pd.DataFrame, calendar: VotingCalendar,
                        election_day: date = ELECTION_DAY,
                        registration_threshold: float = REGISTRATION_THRESHOLD) -> pd.DataFrame:
    """Every booking (linked or not) with booking-side covariates and the
    registered / unconditional-turnout outcomes.

    A booking is registered only if its link scores above
    `registration_threshold`; unconditional turnout uses every link in
    `linked`.
    """
    frame = spells.copy()
    frame = frame[frame["age_years"].notna() & frame["gender"].isin(["male", "female"])].copy()
    if frame.empty:
        raise EmptySampleError("no bookings with reported age and gender")
    frame["state"] = [state_for_fips(f) for f in frame["fips"]]
    frame["first_voting_day"], frame["confined"], frame["proportion"] = _exposure(frame, calendar)
    frame[WEEK] = [iso_week(d) for d in frame["entry_date"]]
    frame["age"] = frame["age_years"].astype(float)
    frame["male"] = (frame["gender"] == "male").astype(float)
    frame["black"] = (frame["race"] == "Black").astype(float)
    frame["white"] = (frame["race"] == "white").astype(float)
    _charge_columns(frame)

    link_cols = linked[["booking_id", "reweighted", "registration_date", "voted_2020"]]
    frame = frame.merge(link_cols.drop_duplicates("booking_id"), on="booking_id", how="left")
    linked_mask = frame["voted_2020"].notna()
    sure = linked_mask & (frame["reweighted"] > registration_threshold)
    registered = sure & frame["registration_date"].notna() & (
        frame["registration_date"] <= election_day)
    frame["registered"] = registered.astype(float)
    frame["voted_unconditional"] = frame["voted_2020"].where(linked_mask, False).astype(float)
    return frame


def registration_and_unconditional(booking_frame: pd.DataFrame,
                                   design: StudyDesign) -> list[DesignEstimate]:
    """Registration and unconditional turnout on both treatments, booking-side covariates."""
    design = StudyDesign(design.control_days, design.treatment_days, design.threshold,
                         sample_kind="all_individuals")
    sample = select_design(booking_frame, design)
    if sample.empty:
        raise EmptySampleError(f"no bookings in design {design.label}")
    return (_four_regressions(sample, design, "registration", "registered", BOOKING_COVARIATES)
            + _four_regressions(sample, design, "unconditional", "voted_unconditional",
                                BOOKING_COVARIATES))


SUMMARY_VARIABLES = [*COVARIATES, "voted_2020", "length_of_stay_days", "proportion"]


def summary_statistics(frame: pd.DataFrame, design: StudyDesign) -> pd.DataFrame:
    """Treatment and control means of covariates, turnout, stay and exposure."""
    sample = select_design(frame, design)[["treated", *SUMMARY_VARIABLES]].astype(float)
    con = duckdb.connect(":memory:")
    try:
        con.register("sample", sample)
        parts = [
            f"""SELECT '{v}' AS variable,
                   AVG(CASE WHEN treated = 1 THEN "{v}" END) AS treatment_mean,
                   AVG(CASE WHEN treated = 0 THEN "{v}" END) AS control_mean,
                   COUNT(CASE WHEN treated = 1 THEN "{v}" END) AS treatment_n,
                   COUNT(CASE WHEN treated = 0 THEN "{v}" END) AS control_n,
                   {i} AS ord
                FROM sample"""
            for i, v in enumerate(SUMMARY_VARIABLES)
        ]
        df = con.execute(" UNION ALL ".join(parts) + " ORDER BY ord").fetchdf()
    finally:
        con.close()
    df = df.drop(columns="ord")
    df.insert(0, "treatment_days", design.treatment_days)
    df.insert(0, "control_days", design.control_days)
    return df


def ballot_return_curve(voters: pd.DataFrame) -> pd.DataFrame:
    """Daily ballot returns and their cumulative share of all returns."""
    dates = voters["ballot_return_date"].dropna()
    if dates.empty:
        return pd.DataFrame({"date": [], "returns": [], "cumulative_share": []})
    counts = dates.value_counts().sort_index()
    return pd.DataFrame({
        "date": list(counts.index),
        "returns": counts.to_numpy(dtype=np.int64),
        "cumulative_share": (counts.cumsum() / counts.sum()).to_numpy(),
    })


def share_from(curve: pd.DataFrame, start: date) -> float:
    """Share of all ballot returns made on or after `start`."""
    if curve.empty:
        return 0.0
    return float(curve.loc[curve["date"] >= start, "returns"].sum() / curve["returns"].sum())
