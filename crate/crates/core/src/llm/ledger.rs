use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Usage;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTotals {
    pub calls: u64,
    pub errors: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_ms: u64,
}

impl TagTotals {
    fn add(&mut self, other: &TagTotals) {
        self.calls += other.calls;
        self.errors += other.errors;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.wall_ms += other.wall_ms;
    }
}

/// Running per-tag totals of every gateway call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub per_tag: BTreeMap<String, TagTotals>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, tag: &str, usage: Usage, latency_ms: u64, failed: bool) {
        let t = self.per_tag.entry(tag.to_string()).or_default();
        t.calls += 1;
        t.errors += failed as u64;
        t.input_tokens += usage.input_tokens;
        t.output_tokens += usage.output_tokens;
        t.wall_ms += latency_ms;
    }

    pub fn tag(&self, tag: &str) -> TagTotals {
        self.per_tag.get(tag).copied().unwrap_or_default()
    }

    pub fn totals(&self) -> TagTotals {
        let mut t = TagTotals::default();
        self.per_tag.values().for_each(|v| t.add(v));
        t
    }
}

/// Dollar prices per thousand tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl PriceTable {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("input_per_1k", self.input_per_1k), ("output_per_1k", self.output_per_1k)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    pub fn price(&self, t: &TagTotals) -> f64 {
        t.input_tokens as f64 * self.input_per_1k / 1000.0
            + t.output_tokens as f64 * self.output_per_1k / 1000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_tag: BTreeMap<String, f64>,
    pub total: f64,
}

pub fn cost(ledger: &UsageLedger, prices: &PriceTable) -> CostBreakdown {
    let per_tag: BTreeMap<String, f64> = ledger
        .per_tag
        .iter()
        .map(|(tag, t)| (tag.clone(), prices.price(t)))
        .collect();
    let total = per_tag.values().sum();
    CostBreakdown { per_tag, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(i: u64, o: u64) -> Usage {
        Usage {
            input_tokens: i,
            output_tokens: o,
        }
    }

    #[test]
    fn totals_are_sums() {
        let mut l = UsageLedger::new();
        l.record("generator", usage(10, 5), 3, false);
        l.record("reflector", usage(20, 7), 4, false);
        let t = l.totals();
        assert_eq!((t.calls, t.input_tokens, t.output_tokens, t.wall_ms), (2, 30, 12, 7));
    }

    #[test]
    fn failures_are_counted() {
        let mut l = UsageLedger::new();
        l.record("curator", Usage::default(), 9, true);
        assert_eq!(l.tag("curator").errors, 1);
        assert_eq!(l.tag("curator").calls, 1);
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        let c = cost(&UsageLedger::new(), &PriceTable { input_per_1k: 1.0, output_per_1k: 2.0 });
        assert_eq!(c.total, 0.0);
        assert!(c.per_tag.is_empty());
    }

    #[test]
    fn million_input_tokens() {
        let mut l = UsageLedger::new();
        l.record("generator", usage(1_000_000, 0), 0, false);
        let c = cost(&l, &PriceTable { input_per_1k: 0.27, output_per_1k: 1.10 });
        assert!((c.total - 270.0).abs() < 1e-9);
    }

    #[test]
    fn cost_is_linear_in_tokens() {
        let p = PriceTable { input_per_1k: 0.27, output_per_1k: 1.10 };
        let mut a = UsageLedger::new();
        let mut b = UsageLedger::new();
        a.record("g", usage(1234, 567), 0, false);
        a.record("r", usage(89, 10), 0, false);
        b.record("g", usage(2468, 1134), 0, false);
        b.record("r", usage(178, 20), 0, false);
        assert_eq!(cost(&b, &p).total, 2.0 * cost(&a, &p).total);
    }

    #[test]
    fn negative_prices_rejected() {
        assert!(PriceTable { input_per_1k: -1.0, output_per_1k: 0.0 }.validate().is_err());
        assert!(PriceTable::default().validate().is_ok());
    }
}
