use crate::datasets::{DataBlock, FederatedDataset, Task};
use crate::error::{check_dim, Error, Result};
use crate::objectives::{ClientObjective, Objective};

/// Client objectives together with the held-out block used for evaluation.
#[derive(Clone, Debug)]
pub struct FederatedProblem {
    pub objectives: Vec<ClientObjective>,
    pub test: DataBlock,
    pub task: Task,
}

impl FederatedProblem {
    pub fn new(dataset: &FederatedDataset, alpha: f64) -> Result<Self> {
        Self::from_parts(dataset.objectives(alpha)?, dataset.test.clone(), dataset.task)
    }

    pub fn from_parts(objectives: Vec<ClientObjective>, test: DataBlock, task: Task) -> Result<Self> {
        let first = objectives
            .first()
            .ok_or_else(|| Error::InvalidData("problem has no clients".into()))?;
        let dim = first.dim();
        for o in &objectives {
            check_dim(dim, o.dim())?;
        }
        let expected = match task {
            Task::Regression => test.x.ncols(),
            Task::Classification { classes } => test.x.ncols() * classes,
        };
        check_dim(dim, expected)?;
        Ok(FederatedProblem { objectives, test, task })
    }

    pub fn n_clients(&self) -> usize {
        self.objectives.len()
    }

    pub fn model_dim(&self) -> usize {
        self.objectives[0].dim()
    }
}
