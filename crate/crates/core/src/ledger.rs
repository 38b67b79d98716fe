//! Query budget accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("budget exhausted: requested {requested}, remaining {remaining} of {budget}")]
pub struct BudgetExhausted {
    pub requested: u64,
    pub remaining: u64,
    pub budget: u64,
}

/// Pay-per-query budget. `spent` only ever grows and never passes `budget`.
///
/// Spending is a single compare-and-increment, so concurrent callers share one
/// authoritative count and a rejected request leaves it untouched.
#[derive(Debug)]
pub struct QueryLedger {
    budget: u64,
    spent: AtomicU64,
}

impl QueryLedger {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            spent: AtomicU64::new(0),
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn spent(&self) -> u64 {
        self.spent.load(Ordering::Acquire)
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.spent()
    }

    /// Charges `units` queries, returning the new spend.
    pub fn try_spend(&self, units: u64) -> Result<u64, BudgetExhausted> {
        let mut current = self.spent.load(Ordering::Acquire);
        loop {
            let next = current
                .checked_add(units)
                .filter(|&n| n <= self.budget)
                .ok_or(BudgetExhausted {
                    requested: units,
                    remaining: self.budget - current,
                    budget: self.budget,
                })?;
            match self.spent.compare_exchange_weak(
                current,
                next,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return Ok(next),
                Err(observed) => current = observed,
            }
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            budget: self.budget,
            spent: self.spent(),
        }
    }
}

/// Plain copy of a ledger's state for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub budget: u64,
    pub spent: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn spends_and_rejects() {
        let ledger = QueryLedger::new(100);
        assert_eq!(ledger.try_spend(32), Ok(32));
        assert_eq!(ledger.remaining(), 68);
        let err = ledger.try_spend(69).unwrap_err();
        assert_eq!(err.remaining, 68);
        assert_eq!(ledger.spent(), 32);
        assert_eq!(ledger.try_spend(68), Ok(100));
        assert!(ledger.try_spend(1).is_err());
        assert!(ledger.try_spend(u64::MAX).is_err());
    }

    #[test]
    fn concurrent_spend_never_overshoots() {
        let ledger = Arc::new(QueryLedger::new(1000));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let ledger = Arc::clone(&ledger);
                std::thread::spawn(move || {
                    let mut ok = 0u64;
                    for _ in 0..300 {
                        if ledger.try_spend(1).is_ok() {
                            ok += 1;
                        }
                    }
                    ok
                })
            })
            .collect();
        let granted: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(granted, 1000);
        assert_eq!(ledger.spent(), 1000);
    }
}
