//! Central finite-difference verification of analytic gradients.
//!
//! Works over a group of networks so that losses coupling several members
//! (feature sharing) can be checked against the same oracle as single-model
//! losses. The relative error uses a unit floor in the denominator, so
//! near-zero components are compared absolutely.

use crate::error::{Error, Result};
use crate::net::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-5,
        }
    }
}

/// Location of one scalar parameter inside a network group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamId {
    pub member: usize,
    pub layer: usize,
    /// "weight" or "bias".
    pub tensor: &'static str,
    pub index: usize,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "member {} layer {} {}[{}]",
            self.member, self.layer, self.tensor, self.index
        )
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<ParamId>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Checks the analytic gradient of a scalar loss over one network.
pub fn grad_check<F>(
    params: &NetworkParams,
    loss: F,
    analytic: &Gradients,
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&NetworkParams) -> Result<f64>,
{
    let members = std::slice::from_ref(params);
    let wrapped = |group: &[NetworkParams]| loss(&group[0]);
    grad_check_group(members, wrapped, std::slice::from_ref(analytic), config)
}

/// Checks analytic gradients of a scalar loss over a group of networks,
/// perturbing every parameter of every member.
pub fn grad_check_group<F>(
    members: &[NetworkParams],
    loss: F,
    analytic: &[Gradients],
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[NetworkParams]) -> Result<f64>,
{
    if members.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} members but {} gradient sets",
            members.len(),
            analytic.len()
        )));
    }
    let base_a = loss(members)?;
    let base_b = loss(members)?;
    if base_a != base_b {
        return Err(Error::GradCheck(format!(
            "loss function is not deterministic: {base_a} vs {base_b}"
        )));
    }

    let mut probe: Vec<NetworkParams> = members.to_vec();
    let h = config.epsilon;
    let mut max_rel = 0.0_f64;
    let mut worst = None;
    let mut checked = 0usize;

    for m in 0..members.len() {
        for j in 0..members[m].layers.len() {
            let weight_len = members[m].layers[j].weight.data().len();
            for idx in 0..weight_len {
                let orig = probe[m].layers[j].weight.data()[idx];
                probe[m].layers[j].weight.data_mut()[idx] = orig + h;
                let up = loss(&probe)?;
                probe[m].layers[j].weight.data_mut()[idx] = orig - h;
                let down = loss(&probe)?;
                probe[m].layers[j].weight.data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = relative_error(analytic[m].layers[j].weight.data()[idx], numeric);
                checked += 1;
                if rel > max_rel {
                    max_rel = rel;
                    worst = Some(ParamId {
                        member: m,
                        layer: j,
                        tensor: "weight",
                        index: idx,
                    });
                }
            }
            let bias_len = members[m].layers[j].bias.len();
            for idx in 0..bias_len {
                let orig = probe[m].layers[j].bias[idx];
                probe[m].layers[j].bias[idx] = orig + h;
                let up = loss(&probe)?;
                probe[m].layers[j].bias[idx] = orig - h;
                let down = loss(&probe)?;
                probe[m].layers[j].bias[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = relative_error(analytic[m].layers[j].bias[idx], numeric);
                checked += 1;
                if rel > max_rel {
                    max_rel = rel;
                    worst = Some(ParamId {
                        member: m,
                        layer: j,
                        tensor: "bias",
                        index: idx,
                    });
                }
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        tolerance: config.tolerance,
        passed: max_rel < config.tolerance,
    })
}
