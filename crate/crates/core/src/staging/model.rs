//! Model assembly: three operational blocks (conv -> ReLU -> batch norm ->
//! average pool, in that order), a feature dense layer to size 50, and the
//! CNN-only or LSTM output head.

use super::{ModelConfig, ModelKind, StagingError};
use crate::neural::{
    read_params, write_params, BatchNorm, ConvEngine, ConvLayer, Dense, Lstm, NeuralError,
    ParamBundle, Parameterized, Phase,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub enum Head {
    CnnOnly { output: Dense },
    CnnLstm { lstm: Lstm, output: Dense },
}

#[derive(Debug, Clone)]
pub struct StagingModel {
    pub config: ModelConfig,
    pub blocks: Vec<(ConvLayer, BatchNorm)>,
    pub feature: Dense,
    pub head: Head,
    pub mode: Phase,
    pub engine: ConvEngine,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f64 + '_ {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    move || rng.gen_range(-bound..bound)
}

/// Build a model with deterministic seeded initialization: conv/dense
/// weights uniform +-sqrt(6/(fan_in+fan_out)), biases zero, batch norm
/// gamma 1 / beta 0, LSTM forget bias 1.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<StagingModel, StagingError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kw = config.kernel_width;
    let mut blocks = Vec::with_capacity(config.blocks);
    let mut in_c = 1usize;
    for out_c in config.channel_trace() {
        let mut conv = ConvLayer::new(in_c, out_c, kw);
        {
            let mut sample = glorot(&mut rng, in_c * kw, out_c * kw);
            conv.weights.mapv_inplace(|_| sample());
        }
        blocks.push((conv, BatchNorm::new(out_c)));
        in_c = out_c;
    }

    let flatten = config.flatten_size();
    let mut feature = Dense::new(flatten, config.feature_size);
    {
        let mut sample = glorot(&mut rng, flatten, config.feature_size);
        feature.weights.mapv_inplace(|_| sample());
    }

    let head = match config.kind {
        ModelKind::CnnOnly => {
            let mut output = Dense::new(config.feature_size, config.classes);
            let mut sample = glorot(&mut rng, config.feature_size, config.classes);
            output.weights.mapv_inplace(|_| sample());
            Head::CnnOnly { output }
        }
        ModelKind::CnnLstm => {
            let mut lstm = Lstm::new(config.feature_size, config.lstm_hidden);
            {
                let mut sample = glorot(&mut rng, config.feature_size, config.lstm_hidden);
                lstm.wx.mapv_inplace(|_| sample());
            }
            {
                let mut sample = glorot(&mut rng, config.lstm_hidden, config.lstm_hidden);
                lstm.wh.mapv_inplace(|_| sample());
            }
            for u in 0..config.lstm_hidden {
                lstm.bias[config.lstm_hidden + u] = 1.0;
            }
            let mut output = Dense::new(config.lstm_hidden, config.classes);
            let mut sample = glorot(&mut rng, config.lstm_hidden, config.classes);
            output.weights.mapv_inplace(|_| sample());
            Head::CnnLstm { lstm, output }
        }
    };

    Ok(StagingModel {
        config: config.clone(),
        blocks,
        feature,
        head,
        mode: Phase::Infer,
        engine: ConvEngine::Auto,
    })
}

impl StagingModel {
    pub fn set_mode(&mut self, mode: Phase) {
        self.mode = mode;
    }

    pub fn require_infer(&self) -> Result<(), StagingError> {
        if self.mode != Phase::Infer {
            return Err(StagingError::Neural(NeuralError::Mode(
                "model is in training mode; call set_mode(Phase::Infer) before classifying".to_string(),
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), StagingError> {
        let file = std::fs::File::create(path).map_err(NeuralError::Io)?;
        write_params(&self.export_params(), std::io::BufWriter::new(file))?;
        Ok(())
    }

    /// Load a checkpoint: rebuilds the architecture from the descriptor and
    /// imports the parameter tensors bit-exactly.
    pub fn load(path: &Path) -> Result<StagingModel, StagingError> {
        let file = std::fs::File::open(path).map_err(NeuralError::Io)?;
        let bundle = read_params(std::io::BufReader::new(file))?;
        let config = config_from_descriptor(&bundle.descriptor)?;
        let mut model = build_model(&config, 0)?;
        model.import_params(&bundle)?;
        Ok(model)
    }
}

fn config_from_descriptor(desc: &str) -> Result<ModelConfig, StagingError> {
    let mut name = None;
    let mut fields = std::collections::HashMap::new();
    for part in desc.split_whitespace() {
        if let Some((k, v)) = part.split_once('=') {
            if k == "name" {
                name = Some(v.to_string());
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }
    let name = name.ok_or_else(|| {
        StagingError::Config(format!("checkpoint descriptor missing model name: {desc:?}"))
    })?;
    let mut config = ModelConfig::from_name(&name)?;
    let mut set = |key: &str, target: &mut usize| -> Result<(), StagingError> {
        if let Some(v) = fields.get(key) {
            *target = v.parse().map_err(|_| {
                StagingError::Config(format!("bad descriptor field {key}={v}"))
            })?;
        }
        Ok(())
    };
    set("blocks", &mut config.blocks)?;
    set("base_filters", &mut config.base_filters)?;
    set("feature", &mut config.feature_size)?;
    set("lstm_hidden", &mut config.lstm_hidden)?;
    set("classes", &mut config.classes)?;
    set("epoch_width", &mut config.epoch_width)?;
    set("kernel_width", &mut config.kernel_width)?;
    config.validate()?;
    Ok(config)
}

impl Parameterized for StagingModel {
    fn export_params(&self) -> ParamBundle {
        let mut b = ParamBundle { descriptor: self.config.descriptor(), tensors: vec![] };
        for (k, (conv, bn)) in self.blocks.iter().enumerate() {
            let p = format!("block{}", k + 1);
            b.push(&format!("{p}/conv/weights"), &[conv.out_channels, conv.in_channels * conv.kernel_width], conv.weights.iter().copied().collect());
            b.push(&format!("{p}/conv/bias"), &[conv.out_channels], conv.bias.to_vec());
            b.push(&format!("{p}/bn/gamma"), &[bn.channels()], bn.gamma.to_vec());
            b.push(&format!("{p}/bn/beta"), &[bn.channels()], bn.beta.to_vec());
            b.push(&format!("{p}/bn/running_mean"), &[bn.channels()], bn.running_mean.to_vec());
            b.push(&format!("{p}/bn/running_var"), &[bn.channels()], bn.running_var.to_vec());
        }
        b.push("feature/weights", &[self.feature.out_features(), self.feature.in_features()], self.feature.weights.iter().copied().collect());
        b.push("feature/bias", &[self.feature.out_features()], self.feature.bias.to_vec());
        match &self.head {
            Head::CnnOnly { output } => {
                b.push("head/output/weights", &[output.out_features(), output.in_features()], output.weights.iter().copied().collect());
                b.push("head/output/bias", &[output.out_features()], output.bias.to_vec());
            }
            Head::CnnLstm { lstm, output } => {
                b.push("head/lstm/wx", &[lstm.wx.nrows(), lstm.wx.ncols()], lstm.wx.iter().copied().collect());
                b.push("head/lstm/wh", &[lstm.wh.nrows(), lstm.wh.ncols()], lstm.wh.iter().copied().collect());
                b.push("head/lstm/bias", &[lstm.bias.len()], lstm.bias.to_vec());
                b.push("head/output/weights", &[output.out_features(), output.in_features()], output.weights.iter().copied().collect());
                b.push("head/output/bias", &[output.out_features()], output.bias.to_vec());
            }
        }
        b
    }

    fn import_params(&mut self, bundle: &ParamBundle) -> Result<(), NeuralError> {
        let expected = self.export_params();
        if bundle.tensors.len() != expected.tensors.len() {
            return Err(NeuralError::Container(format!(
                "checkpoint has {} tensors, model expects {}",
                bundle.tensors.len(),
                expected.tensors.len()
            )));
        }
        for (have, want) in bundle.tensors.iter().zip(&expected.tensors) {
            if have.name != want.name || have.values.len() != want.values.len() {
                return Err(NeuralError::Container(format!(
                    "checkpoint tensor {} ({} values) does not match model tensor {} ({} values)",
                    have.name,
                    have.values.len(),
                    want.name,
                    want.values.len()
                )));
            }
        }
        let mut it = bundle.tensors.iter();
        let mut next = || it.next().expect("length checked");
        for (conv, bn) in &mut self.blocks {
            conv.weights = Array2::from_shape_vec(conv.weights.dim(), next().values.clone()).unwrap();
            conv.bias = Array1::from_vec(next().values.clone());
            bn.gamma = Array1::from_vec(next().values.clone());
            bn.beta = Array1::from_vec(next().values.clone());
            bn.running_mean = Array1::from_vec(next().values.clone());
            bn.running_var = Array1::from_vec(next().values.clone());
        }
        self.feature.weights = Array2::from_shape_vec(self.feature.weights.dim(), next().values.clone()).unwrap();
        self.feature.bias = Array1::from_vec(next().values.clone());
        match &mut self.head {
            Head::CnnOnly { output } => {
                output.weights = Array2::from_shape_vec(output.weights.dim(), next().values.clone()).unwrap();
                output.bias = Array1::from_vec(next().values.clone());
            }
            Head::CnnLstm { lstm, output } => {
                lstm.wx = Array2::from_shape_vec(lstm.wx.dim(), next().values.clone()).unwrap();
                lstm.wh = Array2::from_shape_vec(lstm.wh.dim(), next().values.clone()).unwrap();
                lstm.bias = Array1::from_vec(next().values.clone());
                output.weights = Array2::from_shape_vec(output.weights.dim(), next().values.clone()).unwrap();
                output.bias = Array1::from_vec(next().values.clone());
            }
        }
        Ok(())
    }
}
