use std::path::Path;

use crate::encoder::model::EncoderModel;
use crate::error::{Error, Result};
use crate::persist::{read_envelope, write_envelope};

pub const MODEL_FORMAT: &str = "protofuse-encoder";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &EncoderModel) -> Result<()> {
    write_envelope(path, MODEL_FORMAT, MODEL_VERSION, model)
}

pub fn load_model(path: &Path) -> Result<EncoderModel> {
    let model: EncoderModel = read_envelope(path, MODEL_FORMAT, MODEL_VERSION)?;
    model.check_shapes()?;
    Ok(model)
}

impl EncoderModel {
    /// Every parameter shape agrees with the configuration.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let p = &self.params;
        let expect = [
            ("time_kernels", &p.time_kernels, vec![c.time_features, c.channels, c.time_kernel]),
            ("time_bias", &p.time_bias, vec![c.time_features]),
            ("text_kernels", &p.text_kernels, vec![c.text_features, c.embedding_dim, c.text_kernel]),
            ("text_bias", &p.text_bias, vec![c.text_features]),
            ("time_prototypes", &p.time_prototypes, vec![c.total_time_prototypes(), c.time_features]),
            ("text_prototypes", &p.text_prototypes, vec![c.total_text_prototypes(), c.text_features]),
            (
                "fusion",
                &p.fusion,
                vec![c.classes, c.total_time_prototypes() + c.total_text_prototypes()],
            ),
        ];
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if p.fusion.data().iter().any(|v| *v < 0.0) {
            return Err(Error::Integrity("fusion matrix has negative entries".into()));
        }
        match (&c.regression, &p.head_weight, &p.head_bias) {
            (Some(_), Some(w), Some(b)) if w.shape() == [c.time_features] && b.is_scalar() => Ok(()),
            (None, None, None) => Ok(()),
            _ => Err(Error::Integrity("regression head does not match the configuration".into())),
        }
    }
}
