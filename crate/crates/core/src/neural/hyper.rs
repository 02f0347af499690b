use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

/// Every dimension and training knob used by the models.
///
/// Defaults are the reported optima: the CASCADE side
/// (`ds = dp = dt = k = 100`, `dem = 300`, `ks = 2`, `m = 128`, ReLU) and the
/// RCNN side (64 LSTM units, dropout 0.1, batch 10, Adam epsilon 1e-6,
/// 5 epochs, learning rate 2e-5, weight decay 1e-5, 12 layers x 12 heads).
/// The remaining fields are knobs with no reported value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Stylometric embedding width.
    pub ds: usize,
    /// Personality embedding width.
    pub dp: usize,
    /// Discourse embedding width.
    pub dt: usize,
    /// Fused (CCA) user embedding width.
    pub k: usize,
    /// Word embedding width.
    pub dem: usize,
    /// Convolution kernel width.
    pub ks: usize,
    /// Number of convolution filters.
    pub m: usize,
    pub activation: Activation,

    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub batch_size: usize,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub encoder_layers: usize,
    pub encoder_heads: usize,

    pub seed: u64,
    pub max_len: usize,

    /// Width of the RCNN position-wise feedforward.
    pub ffn_width: usize,
    pub ffn_activation: Activation,
    /// Keep contextual encoder weights fixed during RCNN training.
    pub freeze_encoder: bool,
    /// CCA ridge added to both within-view covariances.
    pub cca_reg: f64,
    pub pv_epochs: usize,
    pub pv_negative: usize,
    pub pv_learning_rate: f64,
    pub min_freq: usize,
    /// Half-width of the uniform initializer.
    pub init_scale: f64,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            ds: 100,
            dp: 100,
            dt: 100,
            k: 100,
            dem: 300,
            ks: 2,
            m: 128,
            activation: Activation::Relu,
            lstm_units: 64,
            lstm_dropout: 0.1,
            batch_size: 10,
            adam_epsilon: 1e-6,
            epochs: 5,
            learning_rate: 2e-5,
            weight_decay: 1e-5,
            encoder_layers: 12,
            encoder_heads: 12,
            seed: 0,
            max_len: 100,
            ffn_width: 128,
            ffn_activation: Activation::Relu,
            freeze_encoder: false,
            cca_reg: 1e-3,
            pv_epochs: 20,
            pv_negative: 5,
            pv_learning_rate: 0.025,
            min_freq: 1,
            init_scale: 0.05,
            svm_lambda: 1e-4,
            svm_epochs: 20,
        }
    }
}

impl HyperParams {
    /// Defaults for the CNN-based models trained from scratch (CASCADE, CNN-SVM,
    /// CUE-SVM). The 2e-5 learning rate is a fine-tuning rate and barely moves
    /// randomly initialized embeddings, so these start at 1e-3 for 10 epochs.
    pub fn cnn_preset() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ds", self.ds),
            ("dp", self.dp),
            ("dt", self.dt),
            ("k", self.k),
            ("dem", self.dem),
            ("ks", self.ks),
            ("m", self.m),
            ("lstm_units", self.lstm_units),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("encoder_layers", self.encoder_layers),
            ("encoder_heads", self.encoder_heads),
            ("max_len", self.max_len),
            ("ffn_width", self.ffn_width),
            ("pv_epochs", self.pv_epochs),
            ("pv_negative", self.pv_negative),
            ("min_freq", self.min_freq),
            ("svm_epochs", self.svm_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::HyperParams(format!("{name} must be positive")));
            }
        }
        let positive_reals = [
            ("adam_epsilon", self.adam_epsilon),
            ("learning_rate", self.learning_rate),
            ("pv_learning_rate", self.pv_learning_rate),
            ("init_scale", self.init_scale),
            ("svm_lambda", self.svm_lambda),
        ];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::HyperParams(format!("{name} must be a positive number, got {v}")));
            }
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("cca_reg", self.cca_reg)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::HyperParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return Err(Error::HyperParams(format!(
                "lstm_dropout must lie in [0, 1), got {}",
                self.lstm_dropout
            )));
        }
        if self.k > self.ds.min(self.dp) {
            return Err(Error::HyperParams(format!(
                "k={} exceeds min(ds, dp)={}",
                self.k,
                self.ds.min(self.dp)
            )));
        }
        if self.ks > self.max_len {
            return Err(Error::HyperParams(format!(
                "kernel width {} exceeds max_len {}",
                self.ks, self.max_len
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let hp = HyperParams::default();
        hp.validate().unwrap();
        assert_eq!((hp.ds, hp.dp, hp.dt, hp.k, hp.dem, hp.ks, hp.m), (100, 100, 100, 100, 300, 2, 128));
        assert_eq!(hp.lstm_units, 64);
        assert_eq!(hp.batch_size, 10);
        assert_eq!(hp.epochs, 5);
        assert_eq!(hp.adam_epsilon, 1e-6);
        assert_eq!(hp.learning_rate, 2e-5);
        assert_eq!(hp.weight_decay, 1e-5);
        assert_eq!((hp.encoder_layers, hp.encoder_heads), (12, 12));
        HyperParams::cnn_preset().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let hp: HyperParams = serde_json::from_str(r#"{"ks": 3, "learning_rate": 0.001}"#).unwrap();
        assert_eq!(hp.ks, 3);
        assert_eq!(hp.m, 128);
        assert!(serde_json::from_str::<HyperParams>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            HyperParams { lstm_dropout: 1.0, ..Default::default() },
            HyperParams { m: 0, ..Default::default() },
            HyperParams { k: 150, ..Default::default() },
            HyperParams { learning_rate: f64::NAN, ..Default::default() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }
}
