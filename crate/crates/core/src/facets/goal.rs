use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ask_parsed, extract_json_object, prompts};
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::gateway::ChatModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalCategory {
    #[serde(rename = "Artifact Creation")]
    ArtifactCreation,
    #[serde(rename = "Information Seeking")]
    InformationSeeking,
    #[serde(rename = "Practical Guidance")]
    PracticalGuidance,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalSubcategory {
    Writing,
    Coding,
    #[serde(rename = "Prompt Generation")]
    PromptGeneration,
    Math,
    Science,
    Teaching,
    #[serde(rename = "How-To Advice")]
    HowToAdvice,
    #[serde(rename = "Self-Care")]
    SelfCare,
    #[serde(rename = "Creative Ideation")]
    CreativeIdeation,
    Other,
}

impl GoalCategory {
    pub fn subcategories(&self) -> &'static [GoalSubcategory] {
        use GoalSubcategory as S;
        match self {
            GoalCategory::ArtifactCreation => &[S::Writing, S::Coding, S::PromptGeneration, S::Other],
            GoalCategory::InformationSeeking => &[S::Writing, S::Coding, S::Math, S::Science, S::Other],
            GoalCategory::PracticalGuidance => {
                &[S::Teaching, S::HowToAdvice, S::SelfCare, S::CreativeIdeation, S::Other]
            }
            GoalCategory::Other => &[S::Other],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalLabel {
    pub category: GoalCategory,
    pub subcategory: GoalSubcategory,
    /// Set when no valid label could be obtained and Other/Other was assumed.
    #[serde(default)]
    pub flagged: bool,
}

impl GoalLabel {
    pub fn new(category: GoalCategory, subcategory: GoalSubcategory) -> Result<Self> {
        if !category.subcategories().contains(&subcategory) {
            return Err(Error::invalid(format!(
                "{subcategory:?} is not a subcategory of {category:?}"
            )));
        }
        Ok(GoalLabel {
            category,
            subcategory,
            flagged: false,
        })
    }

    /// Coding and writing tasks are goals to produce code or a written
    /// artifact; everything else is `other`.
    pub fn task(&self) -> Task {
        match (self.category, self.subcategory) {
            (GoalCategory::ArtifactCreation, GoalSubcategory::Coding) => Task::Coding,
            (GoalCategory::ArtifactCreation, GoalSubcategory::Writing) => Task::Writing,
            _ => Task::Other,
        }
    }
}

const GOAL_REPROMPT: &str = "Your reply was not a valid category and subcategory pair from the list. Reply again with only the JSON object, using one category and one of its listed subcategories.";

fn parse_label(reply: &str) -> std::result::Result<GoalLabel, String> {
    let v = extract_json_object(reply)?;
    let field = |k: &str| -> std::result::Result<Value, String> {
        v.get(k).cloned().ok_or_else(|| format!("missing {k}"))
    };
    let category: GoalCategory =
        serde_json::from_value(field("category")?).map_err(|e| format!("category: {e}"))?;
    let subcategory: GoalSubcategory =
        serde_json::from_value(field("subcategory")?).map_err(|e| format!("subcategory: {e}"))?;
    GoalLabel::new(category, subcategory).map_err(|e| e.to_string())
}

/// Classifies a user goal into the category/subcategory taxonomy. An invalid
/// reply is retried once; if still invalid the goal becomes Other/Other with
/// `flagged` set. Provider failures propagate.
pub fn classify_goal(goal: &str, chat: &dyn ChatModel) -> Result<GoalLabel> {
    if goal.trim().is_empty() {
        return Err(Error::invalid("goal is empty"));
    }
    let prompt = prompts::fill(prompts::GOAL_CLASSIFICATION, &[("user_intent", goal)])?;
    match ask_parsed(chat, prompt, GOAL_REPROMPT, parse_label) {
        Ok(l) => Ok(l),
        Err(Error::Reply(reason)) => {
            log::warn!("goal classification failed ({reason}); using Other/Other");
            Ok(GoalLabel {
                category: GoalCategory::Other,
                subcategory: GoalSubcategory::Other,
                flagged: true,
            })
        }
        Err(e) => Err(e),
    }
}
