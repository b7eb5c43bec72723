use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    /// Label vocabulary size: `v_epi` episodic symbols plus one global
    /// symbol per train class.
    pub vocab: usize,
    pub v_epi: usize,
    pub dim_in: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
            ("vocab", self.vocab),
            ("dim_in", self.dim_in),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("model.{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(config_err(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.v_epi < 2 || self.v_epi > self.vocab {
            return Err(config_err(format!("v_epi {} must be in [2, vocab {}]", self.v_epi, self.vocab)));
        }
        Ok(())
    }

    /// Checks that a `shots`-per-class 2-way episode fits.
    pub fn validate_for_shots(&self, shots: usize) -> Result<()> {
        self.validate()?;
        let need = 4 * shots + 1;
        if self.max_seq < need {
            return Err(config_err(format!("max_seq {} < {need} needed for {shots} shots", self.max_seq)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn n_global(&self) -> usize {
        self.vocab - self.v_epi
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab);
        let embed = self.dim_in * d + d + v * d + self.max_seq * d;
        let layer = 4 * d * d + 2 * d * f + 9 * d + f;
        let head = 2 * d + d * v + v;
        embed + self.n_layers * layer + head
    }
}
