use crate::data::Preprocessor;
use crate::encoders::EncoderSet;

/// Final numerical values of one row on the original data scale.
///
/// `low` is the full low-resolution row and `x_tilde` the generated numerical
/// block on the modelling scale. A missing category yields `None`, an inflated
/// one its stored raw value, anything else the inverse-transformed `x_tilde`.
pub fn assemble_mixed(
    low: &[u32],
    x_tilde: &[f64],
    encoders: &EncoderSet,
    pre: &Preprocessor,
) -> Vec<Option<f64>> {
    let kc = encoders.n_categorical();
    encoders
        .encoders
        .iter()
        .enumerate()
        .map(|(j, enc)| {
            let z = low[kc + j];
            if enc.is_missing_category(z) {
                None
            } else if let Some(v) = enc.inflated(z) {
                Some(v.raw)
            } else {
                Some(pre.invert(j, x_tilde[j]))
            }
        })
        .collect()
}
