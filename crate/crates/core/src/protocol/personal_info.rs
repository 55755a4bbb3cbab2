//! `personal_information_request` schema and the answer guard.
//!
//! Nothing that identifies a person may be stored: no names and no day or
//! month of birth. Ages are capped, every age of 90 or more collapses into the
//! single `"90+"` bucket.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AGE_CAP: i64 = 90;
pub const AGE_CAP_TOKEN: &str = "90+";

const FORBIDDEN_FIELDS: &[&str] = &[
    "name",
    "first_name",
    "last_name",
    "full_name",
    "surname",
    "birth_day",
    "birth_month",
    "birthday",
    "birth_date",
    "date_of_birth",
    "day_of_birth",
    "month_of_birth",
];

pub fn is_forbidden_field(id: &str) -> bool {
    let id = id.trim().to_ascii_lowercase();
    FORBIDDEN_FIELDS.contains(&id.as_str())
}

/// Questions whose answers are ages and therefore carry the cap.
pub fn is_age_question(id: &str) -> bool {
    let id = id.trim().to_ascii_lowercase();
    id == "age" || id.starts_with("age_") || id.ends_with("_age")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Text,
    Pulldown,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub kind: QuestionKind,
    /// Language code to label text.
    pub label: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

impl Question {
    pub fn is_age_capped(&self) -> bool {
        is_age_question(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalInfoSchema {
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(i64),
    Text(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersonalInfoViolation {
    #[error("field {0:?} may identify a person and is not accepted")]
    ForbiddenField(String),
    #[error("no question with id {0:?}")]
    UnknownQuestion(String),
    #[error("answer to {id:?} does not fit a {expected} question")]
    TypeMismatch { id: String, expected: &'static str },
    #[error("answer to {id:?} is out of range")]
    OutOfRange { id: String },
    #[error("schema problem: {0}")]
    InvalidSchema(String),
}

impl PersonalInfoSchema {
    pub fn validate(&self) -> Result<(), PersonalInfoViolation> {
        let mut seen = std::collections::BTreeSet::new();
        for q in &self.questions {
            if is_forbidden_field(&q.id) {
                return Err(PersonalInfoViolation::ForbiddenField(q.id.clone()));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(PersonalInfoViolation::InvalidSchema(format!(
                    "duplicate question id {:?}",
                    q.id
                )));
            }
            let has_options = q.options.as_ref().is_some_and(|o| !o.is_empty());
            if q.kind != QuestionKind::Text && !has_options {
                return Err(PersonalInfoViolation::InvalidSchema(format!(
                    "question {:?} needs options",
                    q.id
                )));
            }
            if q.is_age_capped() {
                if let Some(options) = &q.options {
                    if options.iter().any(|o| o.parse::<i64>().is_ok_and(|n| n >= AGE_CAP)) {
                        return Err(PersonalInfoViolation::InvalidSchema(format!(
                            "age question {:?} offers an uncapped option",
                            q.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

fn cap_age(id: &str, value: &AnswerValue) -> Result<AnswerValue, PersonalInfoViolation> {
    let n = match value {
        AnswerValue::Number(n) => *n,
        AnswerValue::Text(t) if t.trim() == AGE_CAP_TOKEN => {
            return Ok(AnswerValue::Text(AGE_CAP_TOKEN.to_owned()))
        }
        AnswerValue::Text(t) => t.trim().parse::<i64>().map_err(|_| {
            PersonalInfoViolation::TypeMismatch {
                id: id.to_owned(),
                expected: "age",
            }
        })?,
    };
    if n < 1 {
        return Err(PersonalInfoViolation::OutOfRange { id: id.to_owned() });
    }
    if n >= AGE_CAP {
        return Ok(AnswerValue::Text(AGE_CAP_TOKEN.to_owned()));
    }
    Ok(AnswerValue::Number(n))
}

fn check_answer(q: &Question, value: &AnswerValue) -> Result<AnswerValue, PersonalInfoViolation> {
    if q.is_age_capped() {
        return cap_age(&q.id, value);
    }
    match q.kind {
        QuestionKind::Text => match value {
            AnswerValue::Text(t) => Ok(AnswerValue::Text(t.clone())),
            AnswerValue::Number(_) => Err(PersonalInfoViolation::TypeMismatch {
                id: q.id.clone(),
                expected: "text",
            }),
        },
        QuestionKind::Pulldown | QuestionKind::MultipleChoice => {
            let chosen = match value {
                AnswerValue::Text(t) => t.clone(),
                AnswerValue::Number(n) => n.to_string(),
            };
            let options = q.options.as_deref().unwrap_or_default();
            if options.contains(&chosen) {
                Ok(AnswerValue::Text(chosen))
            } else {
                Err(PersonalInfoViolation::TypeMismatch {
                    id: q.id.clone(),
                    expected: "choice",
                })
            }
        }
    }
}

/// Checks answers against the schema and applies the age cap.
///
/// Returns every violation found, not just the first.
pub fn validate_personal_info(
    answers: &BTreeMap<String, AnswerValue>,
    schema: &PersonalInfoSchema,
) -> Result<BTreeMap<String, AnswerValue>, Vec<PersonalInfoViolation>> {
    let mut out = BTreeMap::new();
    let mut violations = Vec::new();
    for (id, value) in answers {
        if is_forbidden_field(id) {
            violations.push(PersonalInfoViolation::ForbiddenField(id.clone()));
            continue;
        }
        let Some(q) = schema.question(id) else {
            violations.push(PersonalInfoViolation::UnknownQuestion(id.clone()));
            continue;
        };
        match check_answer(q, value) {
            Ok(v) => {
                out.insert(id.clone(), v);
            }
            Err(e) => violations.push(e),
        }
    }
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(violations)
    }
}

fn label(en: &str, es: &str, ca: &str) -> BTreeMap<String, String> {
    [("en", en), ("es", es), ("ca", ca)]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

fn yes_no() -> Option<Vec<String>> {
    Some(vec!["yes".to_owned(), "no".to_owned()])
}

/// The fixed first-version question set of the COVID-19 study.
pub fn covid_question_set() -> PersonalInfoSchema {
    use QuestionKind::*;
    let mut ages: Vec<String> = (1..AGE_CAP).map(|n| n.to_string()).collect();
    ages.push(AGE_CAP_TOKEN.to_owned());
    let q = |id: &str, kind, label, options| Question {
        id: id.to_owned(),
        kind,
        label,
        options,
    };
    PersonalInfoSchema {
        questions: vec![
            q("country", Text, label("Country", "País", "País"), None),
            q("zip", Text, label("ZIP code", "Código postal", "Codi postal"), None),
            q("age", Pulldown, label("Age", "Edad", "Edat"), Some(ages)),
            q(
                "diagnosed",
                MultipleChoice,
                label(
                    "Have you been diagnosed with COVID-19?",
                    "¿Le han diagnosticado COVID-19?",
                    "T'han diagnosticat COVID-19?",
                ),
                yes_no(),
            ),
            q(
                "diagnosed_when",
                Text,
                label("If so, when?", "Si es así, ¿cuándo?", "Si és així, quan?"),
                None,
            ),
            q("fever", MultipleChoice, label("Fever", "Fiebre", "Febre"), yes_no()),
            q(
                "fever_amount",
                Text,
                label("If so, how much?", "Si es así, ¿cuánta?", "Si és així, quanta?"),
                None,
            ),
            q(
                "cough_today",
                MultipleChoice,
                label("Did you cough today?", "¿Ha tosido hoy?", "Has tossit avui?"),
                yes_no(),
            ),
            q(
                "cough_amount",
                Text,
                label("If so, how much?", "Si es así, ¿cuánto?", "Si és així, quant?"),
                None,
            ),
            q(
                "other_symptoms",
                Text,
                label(
                    "Tell us about any other symptoms that you think are relevant",
                    "Cuéntenos cualquier otro síntoma que crea relevante",
                    "Explica'ns qualsevol altre símptoma que creguis rellevant",
                ),
                None,
            ),
        ],
    }
}
