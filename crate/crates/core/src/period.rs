use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeriodId {
    year: i32,
    month: u32,
}

impl PeriodId {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(CoreError::InvalidPeriod { year, month });
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Months since year 0, January.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    pub fn pred(self) -> Self {
        self.offset(-1)
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: PeriodId) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for PeriodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for PeriodId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CoreError::InvalidPeriod { year: 0, month: 0 };
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        Self::new(year, month)
    }
}

impl TryFrom<String> for PeriodId {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PeriodId> for String {
    fn from(p: PeriodId) -> String {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn year_boundaries() {
        let dec = PeriodId::new(2020, 12).unwrap();
        assert_eq!(dec.succ(), PeriodId::new(2021, 1).unwrap());
        assert_eq!(PeriodId::new(2021, 1).unwrap().pred(), dec);
        assert_eq!(dec.to_string(), "2020-12");
        assert_eq!("2020-12".parse::<PeriodId>().unwrap(), dec);
        assert!(PeriodId::new(2020, 13).is_err());
        assert!("2020/12".parse::<PeriodId>().is_err());
    }

    proptest! {
        #[test]
        fn succ_pred_roundtrip(year in -3000i32..3000, month in 1u32..=12) {
            let p = PeriodId::new(year, month).unwrap();
            prop_assert_eq!(p.succ().pred(), p);
            prop_assert_eq!(p.pred().succ(), p);
            prop_assert!(p < p.succ());
            prop_assert_eq!(p.months_until(p.offset(17)), 17);
        }
    }
}
