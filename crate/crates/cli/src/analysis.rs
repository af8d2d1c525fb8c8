//! Observability analysis and input design for a weights file.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use relu_mhe::pe_design::{self, ExcitationPlan};
use relu_mhe::relu_net::WeightState;
use relu_mhe::{orthant_geo, Error};
use serde::Serialize;

use crate::weights_io;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub inputs: usize,
    pub hidden: usize,
    pub bias: bool,
    pub observable: bool,
    /// `rank(χ(S))`, when the sign matrix could be computed.
    pub rank: Option<usize>,
    /// Sign vectors of the orthants met by the row space (or affine space).
    pub sign_matrix: Vec<String>,
    pub explanation: String,
}

pub fn analyze(w: &DMatrix<f64>, b: Option<&DVector<f64>>) -> Result<AnalysisReport> {
    let (inputs, hidden) = w.shape();
    let base = AnalysisReport {
        inputs,
        hidden,
        bias: b.is_some(),
        observable: false,
        rank: None,
        sign_matrix: Vec::new(),
        explanation: String::new(),
    };
    let cert = match orthant_geo::observability_certificate(w, b) {
        Ok(cert) => cert,
        Err(e @ (Error::RankDeficientW { .. } | Error::ZeroColumn { .. })) => {
            return Ok(AnalysisReport {
                explanation: format!("the certificate does not apply: {e}"),
                ..base
            });
        }
        Err(e) => return Err(e.into()),
    };
    let signs: Vec<String> = cert.sign_matrix.rows().iter().map(ToString::to_string).collect();
    let space = if b.is_some() { "affine subspace R(W)+b" } else { "row space R(W)" };
    let explanation = if cert.observable {
        format!(
            "the {space} meets {} orthants whose indicators have full rank {hidden}; the weights are locally observable",
            signs.len()
        )
    } else {
        format!(
            "the {space} meets {} orthants whose indicators have rank {} < {hidden}; the individual hidden weights cannot be determined by this certificate",
            signs.len(),
            cert.rank
        )
    };
    Ok(AnalysisReport {
        observable: cert.observable,
        rank: Some(cert.rank),
        sign_matrix: signs,
        explanation,
        ..base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub samples: usize,
    pub certified: bool,
    pub jacobian_rank: usize,
    pub state_dim: usize,
    pub sigma_min: f64,
    /// Orthants used, one per block of inputs.
    pub orthants: Vec<String>,
    /// `‖C_k α − 1‖_∞`; absent when the bias lies in the row space.
    pub bias_condition_residual: Option<f64>,
}

pub fn design(w: &DMatrix<f64>, b: Option<&DVector<f64>>) -> Result<(ExcitationPlan<f64>, DesignReport)> {
    let (plan, state, residual) = match b {
        Some(b) => {
            let plan = pe_design::design_pe_input_bias(w, b)?;
            let residual = pe_design::bias_condition_residual(&plan, w, b)?;
            (plan, WeightState::with_bias(w, b)?, residual)
        }
        None => (pe_design::design_pe_input(w)?, WeightState::fixed_output(w)?, None),
    };
    let check = pe_design::verify_pe(&plan.u, &state)?;
    let report = DesignReport {
        samples: plan.u.nrows(),
        certified: plan.certified,
        jacobian_rank: check.rank,
        state_dim: state.arch().state_dim(),
        sigma_min: check.sigma_min,
        orthants: plan.orthants.iter().map(ToString::to_string).collect(),
        bias_condition_residual: residual,
    };
    Ok((plan, report))
}

/// `analysis.json` in `out`.
pub fn analyze_file(weights: &Path, bias: bool, out: &Path) -> Result<AnalysisReport> {
    let (w, b) = weights_io::read_weights(weights, bias)?;
    let report = analyze(&w, b.as_ref())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("analysis.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// `inputs.csv` (one input per row) and `design.json` in `out`.
pub fn design_file(weights: &Path, bias: bool, out: &Path) -> Result<DesignReport> {
    let (w, b) = weights_io::read_weights(weights, bias)?;
    let (plan, report) = design(&w, b.as_ref())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    weights_io::write_matrix(&out.join("inputs.csv"), &plan.u)?;
    fs::write(out.join("design.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn single_input_three_hidden_not_observable() {
        let r = analyze(&dmatrix![1.0, 2.0, -1.0], None).unwrap();
        assert!(!r.observable);
        assert_eq!(r.rank, Some(2));
        assert_eq!(r.sign_matrix.len(), 2);
        assert!(r.explanation.contains("cannot be determined"));
    }

    #[test]
    fn identity_is_observable_and_designable() {
        let w = DMatrix::<f64>::identity(2, 2);
        assert!(analyze(&w, None).unwrap().observable);
        let (plan, rep) = design(&w, None).unwrap();
        assert_eq!(plan.u.nrows(), 4);
        assert!(rep.certified && rep.jacobian_rank == 4);
        let (_, rep) = design(&w, Some(&dvector![0.1, -0.2])).unwrap();
        assert_eq!((rep.samples, rep.jacobian_rank), (6, 6));
    }

    #[test]
    fn rank_deficient_weights_explained() {
        let r = analyze(&dmatrix![1.0, 2.0; 2.0, 4.0], None).unwrap();
        assert!(!r.observable && r.rank.is_none());
        assert!(r.explanation.contains("does not apply"));
    }
}
