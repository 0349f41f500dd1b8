//! Decay rates given either as rates or as human durations.

use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;

/// Unit of the timestamps in the event file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TimeUnit {
    Second,
    Minute,
    Hour,
    Day,
    Week,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Second => 1.0,
            TimeUnit::Minute => 60.0,
            TimeUnit::Hour => 3600.0,
            TimeUnit::Day => 86_400.0,
            TimeUnit::Week => 604_800.0,
        }
    }
}

/// Parses a comma list of decays. Plain numbers are rates (1/time); items
/// with a suffix `s`, `m`, `h`, `d` or `w` are durations and become
/// `1 / duration` in `unit`.
pub fn parse_betas(text: &str, unit: TimeUnit) -> Result<Vec<f64>> {
    let betas = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| parse_beta(item, unit))
        .collect::<Result<Vec<_>>>()?;
    if betas.is_empty() {
        bail!("no decay rates given");
    }
    Ok(betas)
}

fn parse_beta(item: &str, unit: TimeUnit) -> Result<f64> {
    let beta = if let Ok(rate) = f64::from_str(item) {
        rate
    } else {
        let split = item
            .find(|c: char| c.is_ascii_alphabetic())
            .with_context(|| format!("cannot parse decay {item:?}"))?;
        let (num, suffix) = item.split_at(split);
        let amount: f64 = num
            .trim()
            .parse()
            .with_context(|| format!("cannot parse duration {item:?}"))?;
        let seconds = match suffix {
            "s" => 1.0,
            "m" | "min" => 60.0,
            "h" => 3600.0,
            "d" => 86_400.0,
            "w" => 604_800.0,
            _ => bail!("unknown duration suffix {suffix:?} in {item:?} (use s, m, h, d or w)"),
        };
        unit.seconds() / (amount * seconds)
    };
    if !(beta.is_finite() && beta > 0.0) {
        bail!("decay {item:?} must be a positive finite rate");
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_pass_through() {
        assert_eq!(
            parse_betas("0.0714,1,12", TimeUnit::Day).unwrap(),
            vec![0.0714, 1.0, 12.0]
        );
    }

    #[test]
    fn durations_become_rates() {
        let b = parse_betas("2w,1d,2h", TimeUnit::Day).unwrap();
        assert!((b[0] - 1.0 / 14.0).abs() < 1e-15);
        assert_eq!(b[1], 1.0);
        assert_eq!(b[2], 12.0);
        let b = parse_betas("30m", TimeUnit::Hour).unwrap();
        assert_eq!(b, vec![2.0]);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(parse_betas("", TimeUnit::Day).is_err());
        assert!(parse_betas("3y", TimeUnit::Day).is_err());
        assert!(parse_betas("-1", TimeUnit::Day).is_err());
        assert!(parse_betas("0d", TimeUnit::Day).is_err());
    }
}
