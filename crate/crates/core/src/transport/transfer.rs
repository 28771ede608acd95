use super::TransportPlan;
use crate::error::{check_dim, Error, Result};
use crate::preference::PreferenceWeights;

/// Carries source-domain weights to the target domain through `plan`.
///
/// Each source component's mass is split across target components in
/// proportion to its row of the plan: `w_t[j] = Σ_i w_s[i] · T_ij / Σ_k T_ik`.
/// Under the uniform row marginals `1/m` this equals `m · (w_s T)`; dividing
/// by the actual row sums keeps the output on the simplex regardless of the
/// residual marginal error, and maps the identity coupling to the identity.
pub fn transfer_weights(
    w_s: &PreferenceWeights,
    plan: &TransportPlan,
) -> Result<PreferenceWeights> {
    check_dim(plan.rows(), w_s.len())?;
    let values = plan.values();
    let mut out = vec![0.0; plan.cols()];
    for (i, &w) in w_s.as_slice().iter().enumerate() {
        let row = values.row(i);
        let mass = row.sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plan row {i} carries no mass"
            )));
        }
        for (o, &t) in out.iter_mut().zip(row.iter()) {
            *o += w * (t / mass);
        }
    }
    PreferenceWeights::new(out)
}
