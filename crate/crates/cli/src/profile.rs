//! `name=value` covariate profiles on the command line.

use anyhow::{bail, Context};
use shapehazard::{CovariateNames, CovariateProfile, FitReport, Role};

/// Covariate names by role, recovered from a saved fit report.
pub fn names_from_report(report: &FitReport) -> CovariateNames {
    let pick = |role: Role| {
        report
            .coefficients
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    };
    CovariateNames {
        z1: pick(Role::Z1),
        z2: pick(Role::Z2),
        z3: pick(Role::Z3),
    }
}

/// Parses `"a=1,b=0.5"`. Covariates that are not mentioned are zero.
pub fn parse(text: &str, names: &CovariateNames) -> anyhow::Result<CovariateProfile> {
    let mut z1 = vec![0.0; names.z1.len()];
    let mut z2 = vec![0.0; names.z2.len()];
    let mut z3 = vec![0.0; names.z3.len()];
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((name, value)) = pair.split_once('=') else {
            bail!("profile entry {pair:?} is not name=value");
        };
        let (name, value) = (name.trim(), value.trim());
        let value: f64 = value
            .parse()
            .with_context(|| format!("profile value for {name:?} is not a number"))?;
        if !value.is_finite() {
            bail!("profile value for {name:?} is not finite");
        }
        let slot = [(&names.z1, &mut z1), (&names.z2, &mut z2), (&names.z3, &mut z3)]
            .into_iter()
            .find_map(|(ns, zs)| ns.iter().position(|n| n == name).map(|k| (zs, k)));
        match slot {
            Some((zs, k)) => zs[k] = value,
            None => bail!(
                "unknown covariate {name:?}; known: {}",
                names.all().cloned().collect::<Vec<_>>().join(", ")
            ),
        }
    }
    Ok(CovariateProfile::fixed(z1, z2, z3))
}
