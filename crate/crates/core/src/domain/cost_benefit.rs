//! The client's ledger of costs and benefits of change.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::stage::MiStage;
use super::DomainError;

const COST_BENEFIT_JSON: &str = include_str!("../../data/cost_benefit.json");

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostBenefitTable {
    pub stage: MiStage,
    pub costs: Vec<String>,
    pub benefits: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerSide {
    #[serde(alias = "costs")]
    Cost,
    #[serde(alias = "benefits")]
    Benefit,
}

impl CostBenefitTable {
    pub fn new(stage: MiStage, costs: Vec<String>, benefits: Vec<String>) -> Result<Self, DomainError> {
        let table = Self { stage, costs, benefits };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), DomainError> {
        for list in [&self.costs, &self.benefits] {
            for (i, entry) in list.iter().enumerate() {
                if list[..i].contains(entry) {
                    return Err(DomainError::InvalidData(format!("duplicate entry {entry:?}")));
                }
            }
        }
        Ok(())
    }

    /// The bundled default table for `stage`.
    pub fn default_for(stage: MiStage) -> CostBenefitTable {
        static DEFAULTS: OnceLock<Vec<CostBenefitTable>> = OnceLock::new();
        DEFAULTS
            .get_or_init(|| parse_defaults(COST_BENEFIT_JSON).expect("bundled cost_benefit.json is valid"))
            .iter()
            .find(|t| t.stage == stage)
            .cloned()
            .expect("every stage has a default table")
    }

    pub fn side(&self, side: LedgerSide) -> &[String] {
        match side {
            LedgerSide::Cost => &self.costs,
            LedgerSide::Benefit => &self.benefits,
        }
    }

    pub(crate) fn side_mut(&mut self, side: LedgerSide) -> &mut Vec<String> {
        match side {
            LedgerSide::Cost => &mut self.costs,
            LedgerSide::Benefit => &mut self.benefits,
        }
    }
}

#[derive(Deserialize)]
struct DefaultsFile {
    #[allow(dead_code)]
    version: u32,
    tables: Vec<CostBenefitTable>,
}

fn parse_defaults(json: &str) -> Result<Vec<CostBenefitTable>, DomainError> {
    let file: DefaultsFile =
        serde_json::from_str(json).map_err(|e| DomainError::InvalidData(e.to_string()))?;
    for table in &file.tables {
        table.validate()?;
    }
    for stage in MiStage::ALL {
        if !file.tables.iter().any(|t| t.stage == stage) {
            return Err(DomainError::InvalidData(format!("no default table for {stage}")));
        }
    }
    Ok(file.tables)
}
