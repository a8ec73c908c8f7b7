use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use super::BleUuid;

const BUILTIN_RULES: &str = include_str!("../../data/fingerprint_rules.json");
pub const RULE_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("rule file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule file version {0} is not supported")]
    Version(u32),
    #[error("rule '{rule}' has an invalid name pattern: {source}")]
    Pattern { rule: String, source: regex::Error },
    #[error("rule '{0}' has no conditions")]
    Unconditional(String),
}

/// What a device is believed to be, with the rules that support it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub manufacturer: Option<String>,
    pub device_type: Option<String>,
    pub model: Option<String>,
    pub evidence: Vec<String>,
}

impl Fingerprint {
    pub fn is_empty(&self) -> bool {
        self.manufacturer.is_none() && self.device_type.is_none() && self.model.is_none()
    }
}

/// The observable facts rules are matched against.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FingerprintInput {
    pub company_ids: BTreeSet<u16>,
    pub continuity_types: BTreeSet<u8>,
    pub apple_models: BTreeSet<u16>,
    pub service_uuids: BTreeSet<BleUuid>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RuleFile {
    pub version: u32,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Rule {
    pub name: String,
    pub conditions: Conditions,
    #[serde(default)]
    pub sets: RuleSets,
}

/// All present conditions must hold.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditions {
    #[serde(default, deserialize_with = "opt_hex_u16")]
    pub company_id: Option<u16>,
    #[serde(default, deserialize_with = "opt_hex_u8")]
    pub continuity_type: Option<u8>,
    #[serde(default, deserialize_with = "opt_hex_u16")]
    pub apple_model: Option<u16>,
    #[serde(default)]
    pub service_uuid: Option<BleUuid>,
    /// Case-insensitive regular expression over advertised and GATT names.
    #[serde(default)]
    pub name_pattern: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSets {
    pub manufacturer: Option<String>,
    pub device_type: Option<String>,
    pub model: Option<String>,
}

struct CompiledRule {
    rule: Rule,
    pattern: Option<Regex>,
}

/// An ordered rule table. The first firing rule that sets a field wins it.
pub struct Fingerprinter {
    rules: Vec<CompiledRule>,
}

impl Fingerprinter {
    pub fn from_json(json: &str) -> Result<Self, RulesError> {
        let file: RuleFile = serde_json::from_str(json)?;
        if file.version != RULE_FILE_VERSION {
            return Err(RulesError::Version(file.version));
        }
        let rules = file
            .rules
            .into_iter()
            .map(|rule| {
                let c = &rule.conditions;
                if c.company_id.is_none()
                    && c.continuity_type.is_none()
                    && c.apple_model.is_none()
                    && c.service_uuid.is_none()
                    && c.name_pattern.is_none()
                {
                    return Err(RulesError::Unconditional(rule.name.clone()));
                }
                let pattern = c
                    .name_pattern
                    .as_deref()
                    .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
                    .transpose()
                    .map_err(|source| RulesError::Pattern { rule: rule.name.clone(), source })?;
                Ok(CompiledRule { rule, pattern })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    /// The rule table shipped in `data/fingerprint_rules.json`.
    pub fn builtin() -> Arc<Fingerprinter> {
        static BUILTIN: OnceLock<Arc<Fingerprinter>> = OnceLock::new();
        BUILTIN
            .get_or_init(|| Arc::new(Fingerprinter::from_json(BUILTIN_RULES).expect("builtin rules are valid")))
            .clone()
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().map(|r| &r.rule)
    }

    /// Whether the named rule's conditions hold on `input`.
    pub fn rule_holds(&self, name: &str, input: &FingerprintInput) -> Option<bool> {
        self.rules.iter().find(|r| r.rule.name == name).map(|r| r.holds(input))
    }

    pub fn fingerprint(&self, input: &FingerprintInput) -> Fingerprint {
        let mut fp = Fingerprint::default();
        for r in self.rules.iter().filter(|r| r.holds(input)) {
            let sets = &r.rule.sets;
            for (slot, value) in [
                (&mut fp.manufacturer, &sets.manufacturer),
                (&mut fp.device_type, &sets.device_type),
                (&mut fp.model, &sets.model),
            ] {
                if slot.is_none() {
                    slot.clone_from(value);
                }
            }
            fp.evidence.push(r.rule.name.clone());
        }
        fp
    }
}

impl CompiledRule {
    fn holds(&self, input: &FingerprintInput) -> bool {
        let c = &self.rule.conditions;
        c.company_id.is_none_or(|id| input.company_ids.contains(&id))
            && c.continuity_type.is_none_or(|t| input.continuity_types.contains(&t))
            && c.apple_model.is_none_or(|m| input.apple_models.contains(&m))
            && c.service_uuid.is_none_or(|u| input.service_uuids.contains(&u))
            && self.pattern.as_ref().is_none_or(|p| input.names.iter().any(|n| p.is_match(n)))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HexOrInt {
    Int(u64),
    Text(String),
}

fn parse_hex(v: HexOrInt) -> Result<u64, String> {
    match v {
        HexOrInt::Int(i) => Ok(i),
        HexOrInt::Text(s) => {
            let t = s.trim_start_matches("0x").trim_start_matches("0X");
            u64::from_str_radix(t, 16).map_err(|e| format!("'{s}': {e}"))
        }
    }
}

fn opt_hex_u16<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u16>, D::Error> {
    Option::<HexOrInt>::deserialize(d)?
        .map(|v| parse_hex(v).and_then(|n| u16::try_from(n).map_err(|e| e.to_string())))
        .transpose()
        .map_err(serde::de::Error::custom)
}

fn opt_hex_u8<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u8>, D::Error> {
    Option::<HexOrInt>::deserialize(d)?
        .map(|v| parse_hex(v).and_then(|n| u8::try_from(n).map_err(|e| e.to_string())))
        .transpose()
        .map_err(serde::de::Error::custom)
}
