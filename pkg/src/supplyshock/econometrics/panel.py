"""Transaction panels, price changes and CSV round-tripping."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..model import DomainError

SCHEMA_VERSION = 1
KEY_COLUMNS = ["firm_id", "supplier_id", "product_id", "country_id", "period"]
INSTANCE = ["firm_id", "supplier_id", "product_id", "country_id"]
PANEL_COLUMNS = KEY_COLUMNS + ["value", "quantity", "unit_price"]


def schema_header(kind: str) -> str:
    return f"# schema_version={SCHEMA_VERSION} table={kind}\n"


def write_table(df: pd.DataFrame, kind: str) -> str:
    """CSV text with a schema-version header line."""
    return schema_header(kind) + df.to_csv(index=False, lineterminator="\n", float_format="%.17g")


def read_table(source) -> pd.DataFrame:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    return pd.read_csv(source, comment="#")


@dataclass
class TransactionPanel:
    data: pd.DataFrame

    def __post_init__(self):
        missing = [c for c in KEY_COLUMNS + ["value", "quantity"] if c not in self.data]
        if missing:
            raise DomainError(f"panel lacks columns {missing}")
        df = self.data.copy()
        df[["value", "quantity"]] = df[["value", "quantity"]].astype(float)
        df["unit_price"] = df["value"] / df["quantity"]
        extra = [c for c in df.columns if c not in PANEL_COLUMNS]
        self.data = df[PANEL_COLUMNS + extra].sort_values(KEY_COLUMNS, kind="mergesort").reset_index(drop=True)

    @classmethod
    def from_records(cls, records) -> "TransactionPanel":
        return cls(pd.DataFrame.from_records(records))

    def validate(self) -> None:
        df = self.data
        if (df["value"] <= 0).any() or (df["quantity"] <= 0).any():
            raise DomainError("value and quantity must be positive")
        if df.duplicated(KEY_COLUMNS).any():
            raise DomainError("duplicate (firm, supplier, product, country, period) record")
        if not np.allclose(df["unit_price"], df["value"] / df["quantity"], rtol=1e-9, atol=0):
            raise DomainError("unit_price inconsistent with value/quantity")

    @property
    def periods(self) -> np.ndarray:
        return np.sort(self.data["period"].unique())

    def __len__(self) -> int:
        return len(self.data)

    def to_csv(self) -> str:
        return write_table(self.data, "transactions")

    @classmethod
    def from_csv(cls, source) -> "TransactionPanel":
        # unit prices are recomputed rather than trusted
        df = read_table(source).drop(columns=["unit_price"], errors="ignore")
        return cls(df)

    def links(self) -> pd.DataFrame:
        """Firm-supplier-period import values (summed over products and countries)."""
        return (self.data.groupby(["firm_id", "supplier_id", "period"], as_index=False)["value"].sum())


@dataclass
class PriceChangePanel:
    data: pd.DataFrame
    definition: str
    rejected: int = 0
    diagnostics: dict = field(default_factory=dict)


def _pct_difference(p1, p0):
    return (p1 - p0) / (0.5 * (p1 + p0))


def price_changes(panel: TransactionPanel, definition: str = "log") -> PriceChangePanel:
    """Period-on-period change in each import instance's unit price.

    ``definition`` is ``'log'`` (log difference) or ``'pct'`` (difference over
    the two-period average).  Instances without a record in the previous
    period contribute nothing.
    """
    if definition not in ("log", "pct"):
        raise DomainError("definition must be 'log' or 'pct'")
    df = panel.data
    bad = ~(df["unit_price"] > 0) | ~np.isfinite(df["unit_price"])
    rejected = int(bad.sum())
    df = df.loc[~bad, INSTANCE + ["period", "unit_price", "value"]]
    prev = df.assign(period=df["period"] + 1).rename(columns={"unit_price": "price_prev", "value": "value_prev"})
    joined = df.merge(prev, on=INSTANCE + ["period"], how="inner")
    if definition == "log":
        delta = np.log(joined["unit_price"]) - np.log(joined["price_prev"])
    else:
        delta = _pct_difference(joined["unit_price"], joined["price_prev"])
    out = joined[INSTANCE + ["period"]].assign(delta=delta.to_numpy(), weight=joined["value"].to_numpy())
    out = out.sort_values(INSTANCE + ["period"], kind="mergesort").reset_index(drop=True)
    diagnostics = {"records": len(panel.data), "rejected_nonpositive": rejected,
                   "changes": len(out), "unmatched": len(df) - len(out)}
    return PriceChangePanel(out, definition, rejected, diagnostics)
