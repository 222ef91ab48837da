//! `--arity-filter` values: comma-separated arities, ranges `a-b`, or `a+`.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArityFilter {
    /// Inclusive ranges; empty keeps every arity.
    ranges: Vec<(usize, usize)>,
}

impl ArityFilter {
    pub fn keeps(&self, arity: usize) -> bool {
        self.ranges.is_empty() || self.ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&arity))
    }
}

impl FromStr for ArityFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "all" || s == "*" {
            return Ok(Self::default());
        }
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad arity {t:?}"));
        let mut ranges = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            let range = if let Some(lo) = part.strip_suffix('+') {
                (num(lo)?, usize::MAX)
            } else if let Some((lo, hi)) = part.split_once('-') {
                (num(lo)?, num(hi)?)
            } else {
                let a = num(part)?;
                (a, a)
            };
            if range.0 > range.1 {
                return Err(format!("empty arity range {part:?}"));
            }
            ranges.push(range);
        }
        Ok(Self { ranges })
    }
}

impl fmt::Display for ArityFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ranges.is_empty() {
            return write!(f, "all");
        }
        let parts: Vec<String> = self
            .ranges
            .iter()
            .map(|&(lo, hi)| match (lo, hi) {
                (lo, usize::MAX) => format!("{lo}+"),
                (lo, hi) if lo == hi => lo.to_string(),
                (lo, hi) => format!("{lo}-{hi}"),
            })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}
