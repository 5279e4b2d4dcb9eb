//! Year-month arithmetic and year-range windows.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{HydroError, Result};

/// A calendar month, `month` in 1..=12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(HydroError::Data(format!(
                "month {month} out of range 1..=12 (year {year})"
            )));
        }
        Ok(YearMonth { year, month })
    }

    /// Zero-based calendar month index (0 = January).
    pub fn month0(self) -> usize {
        self.month as usize - 1
    }

    pub fn next(self) -> YearMonth {
        if self.month == 12 {
            YearMonth {
                year: self.year + 1,
                month: 1,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn add_months(self, k: usize) -> YearMonth {
        let total = self.year as i64 * 12 + (self.month as i64 - 1) + k as i64;
        YearMonth {
            year: (total.div_euclid(12)) as i32,
            month: (total.rem_euclid(12) + 1) as u8,
        }
    }

    /// Sequence of `n` consecutive months starting here.
    pub fn sequence(self, n: usize) -> Vec<YearMonth> {
        let mut out = Vec::with_capacity(n);
        let mut ym = self;
        for _ in 0..n {
            out.push(ym);
            ym = ym.next();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Checks that months are strictly increasing with no gaps.
pub fn check_contiguous(months: &[YearMonth]) -> Result<()> {
    for w in months.windows(2) {
        let expect = w[0].next();
        if w[1] != expect {
            return Err(HydroError::Data(format!(
                "month gap: {} is followed by {}, expected {}",
                w[0], w[1], expect
            )));
        }
    }
    Ok(())
}

/// Inclusive year range used for train/validation splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_year: i32,
    pub end_year: i32,
}

impl Window {
    pub fn new(start_year: i32, end_year: i32) -> Result<Self> {
        if end_year < start_year {
            return Err(HydroError::Config(format!(
                "window end year {end_year} precedes start year {start_year}"
            )));
        }
        Ok(Window {
            start_year,
            end_year,
        })
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        ym.year >= self.start_year && ym.year <= self.end_year
    }

    /// Indices of the months that fall inside this window.
    pub fn select(&self, months: &[YearMonth]) -> Vec<usize> {
        months
            .iter()
            .enumerate()
            .filter(|(_, ym)| self.contains(**ym))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_arithmetic() {
        let ym = YearMonth::new(2000, 12).unwrap();
        assert_eq!(ym.next(), YearMonth::new(2001, 1).unwrap());
        assert_eq!(ym.add_months(13), YearMonth::new(2002, 1).unwrap());
        assert_eq!(ym.sequence(3)[2], YearMonth::new(2001, 2).unwrap());
    }

    #[test]
    fn month_range_validation() {
        assert!(YearMonth::new(2000, 0).is_err());
        assert!(YearMonth::new(2000, 13).is_err());
    }

    #[test]
    fn contiguity() {
        let ok = YearMonth::new(1999, 11).unwrap().sequence(4);
        assert!(check_contiguous(&ok).is_ok());
        let bad = vec![
            YearMonth::new(2000, 1).unwrap(),
            YearMonth::new(2000, 3).unwrap(),
        ];
        let err = check_contiguous(&bad).unwrap_err();
        assert!(err.to_string().contains("month gap"));
    }

    #[test]
    fn window_selection() {
        let months = YearMonth::new(2018, 11).unwrap().sequence(16);
        let w = Window::new(2019, 2019).unwrap();
        let idx = w.select(&months);
        assert_eq!(idx.len(), 12);
        assert_eq!(months[idx[0]], YearMonth::new(2019, 1).unwrap());
    }
}
