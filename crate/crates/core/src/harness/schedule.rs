use std::fmt;

use super::HarnessError;
use crate::estimators::TheoryConstants;
use crate::optimizers::{sample_complexity, theory_schedule, SampleComplexity, ScheduleConfig, ScheduleVariant};

/// Schedule and total sample count for one accuracy target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleReport {
    pub variant: ScheduleVariant,
    pub dim: usize,
    pub constants: TheoryConstants,
    pub schedule: ScheduleConfig,
    pub complexity: SampleComplexity,
}

/// Reads a constants file of `key = value` lines.
///
/// Unset values default to 1 (`gamma` to 0.5, `horizon` and `dim` to 1 and
/// 15). When any of `r, g, l, gamma, horizon` is given, `g_g` and `g_h` are
/// derived from them unless set explicitly.
pub fn parse_constants(text: &str, source_name: &str) -> Result<(TheoryConstants, usize), HarnessError> {
    let mut c = TheoryConstants { r: 1.0, g: 1.0, l: 1.0, gamma: 0.5, horizon: 1, m: 1.0, c: 1.0, delta_j: 1.0, g_g: 1.0, g_h: 1.0 };
    let mut dim = 15usize;
    let (mut primitive, mut g_g, mut g_h) = (false, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| HarnessError::Config { source_name: source_name.into(), line: i + 1, message };
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || value.parse::<f64>().map_err(|e| err(format!("`{value}`: {e}")));
        let count = || value.parse::<usize>().map_err(|e| err(format!("`{value}`: {e}")));
        match key {
            "r" => c.r = num()?,
            "g" => c.g = num()?,
            "l" => c.l = num()?,
            "gamma" => c.gamma = num()?,
            "horizon" => c.horizon = count()?,
            "m" => c.m = num()?,
            "c" => c.c = num()?,
            "delta_j" => c.delta_j = num()?,
            "g_g" => g_g = Some(num()?),
            "g_h" => g_h = Some(num()?),
            "dim" => dim = count()?,
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
        primitive |= matches!(key, "r" | "g" | "l" | "gamma" | "horizon");
    }
    if primitive {
        c = TheoryConstants::derive(c.r, c.g, c.l, c.gamma, c.horizon, c.m, c.c, c.delta_j);
    }
    c.g_g = g_g.unwrap_or(c.g_g);
    c.g_h = g_h.unwrap_or(c.g_h);
    if !(c.m > 0.0 && c.g_g > 0.0 && c.g_h > 0.0 && c.delta_j > 0.0) {
        return Err(HarnessError::Invalid("m, g_g, g_h and delta_j must be positive".into()));
    }
    Ok((c, dim))
}

pub fn schedule_calc(
    epsilon: f64,
    constants: &TheoryConstants,
    dim: usize,
    variant: ScheduleVariant,
) -> Result<ScheduleReport, HarnessError> {
    let schedule = theory_schedule(constants, epsilon, dim, variant)?;
    let complexity = sample_complexity(constants, epsilon, dim, variant)?;
    Ok(ScheduleReport { variant, dim, constants: *constants, schedule, complexity })
}

impl fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.schedule;
        let c = &self.constants;
        writeln!(f, "variant            {:?}", self.variant)?;
        writeln!(f, "epsilon            {}", s.epsilon)?;
        writeln!(f, "G_g                {}", c.g_g)?;
        writeln!(f, "G_H                {}", c.g_h)?;
        writeln!(f, "M                  {}", c.m)?;
        writeln!(f, "Delta_J            {}", c.delta_j)?;
        writeln!(f, "dim                {}", self.dim)?;
        writeln!(f, "batch_grad         {}", s.batch_grad)?;
        writeln!(f, "batch_hess         {}", s.batch_hess)?;
        if self.variant == ScheduleVariant::Dvr {
            writeln!(f, "batch_anchor       {}", s.batch_anchor)?;
            writeln!(f, "batch_correction   {}", s.batch_correction)?;
        }
        writeln!(f, "q                  {}", s.q)?;
        writeln!(f, "iterations         {}", s.iterations)?;
        writeln!(f, "delta              {}", s.delta)?;
        writeln!(f, "gradient_samples   {:.0}", self.complexity.per_iteration_gradient)?;
        writeln!(f, "hessian_samples    {:.0}", self.complexity.per_iteration_hessian)?;
        write!(f, "total_samples      {:.0}", self.complexity.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_constants_by_default() {
        let (c, dim) = parse_constants("# unit\n", "c.txt").unwrap();
        assert_eq!((c.g_g, c.g_h, c.m, c.delta_j, dim), (1.0, 1.0, 1.0, 1.0, 15));
        let r = schedule_calc(0.01, &c, dim, ScheduleVariant::Dr).unwrap();
        assert_eq!(r.schedule.batch_grad, 1_440_000);
        assert_eq!(r.schedule.iterations, 24_000);
        assert!(r.to_string().contains("1440000"));
    }

    #[test]
    fn explicit_bound_and_precondition() {
        let (c, _) = parse_constants("g_h = 0.2", "c.txt").unwrap();
        assert!(schedule_calc(0.04, &c, 15, ScheduleVariant::Dvr).is_err());
        let err = parse_constants("m = 1\nzeta = 2", "c.txt").unwrap_err();
        assert!(err.to_string().starts_with("c.txt:2:"));
    }

    #[test]
    fn primitives_are_derived() {
        let (c, _) = parse_constants("r = 1\ngamma = 0.9\nhorizon = 3\ng = 1.4142135623730951\nl = 0.5", "c.txt").unwrap();
        let d = TheoryConstants::derive(1.0, std::f64::consts::SQRT_2, 0.5, 0.9, 3, 1.0, 1.0, 1.0);
        assert_eq!(c.g_g, d.g_g);
        assert_eq!(c.g_h, d.g_h);
    }
}
