use crate::distribution::OptionDistribution;
use crate::error::{Error, Result};
use crate::survey::{Dataset, Persona, Subgroup};

/// Anything that maps a persona and a question to an option distribution.
pub trait ResponseModel {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution>;
}

/// A response model whose distribution is a softmax of parameter-linear logits,
/// exposing enough structure for analytic gradients.
pub trait DifferentiableModel: ResponseModel {
    fn parameters(&self) -> &[f64];

    fn parameters_mut(&mut self) -> &mut [f64];

    fn logits(&self, persona: &Persona, question_id: &str) -> Result<Vec<f64>>;

    /// Adds `J^T upstream` into `grad`, where `J` is the Jacobian of the
    /// logits of `(persona, question_id)` with respect to the parameters.
    fn backprop_logits(&self, persona: &Persona, question_id: &str, upstream: &[f64], grad: &mut [f64]) -> Result<()>;
}

impl<M: ResponseModel + ?Sized> ResponseModel for &M {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        (**self).predict(persona, question_id)
    }
}

impl<M: ResponseModel + ?Sized> ResponseModel for Box<M> {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        (**self).predict(persona, question_id)
    }
}

/// The survey itself as a model: predicts each subgroup's empirical distribution.
impl ResponseModel for Dataset {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        match self.subgroup_distribution(persona, question_id)? {
            Subgroup::Supported { distribution, .. } => Ok(distribution),
            Subgroup::Empty => {
                Err(Error::EmptySupport { persona: persona.to_string(), question: question_id.to_string() })
            }
        }
    }
}

/// Uniform predictions for every question of a dataset; the untrained baseline.
pub struct UniformModel<'a> {
    dataset: &'a Dataset,
}

impl<'a> UniformModel<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self { dataset }
    }
}

impl ResponseModel for UniformModel<'_> {
    fn predict(&self, _persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        Ok(OptionDistribution::uniform(self.dataset.question(question_id)?.k()))
    }
}
