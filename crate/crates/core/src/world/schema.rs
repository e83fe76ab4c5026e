//! JSON app-definition loader and validator.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AppDefinition, CmpOp, Condition, ElementKind, Screen, TransitionRule, Trigger};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoadError {
    /// The document does not match the schema or violates an invariant.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    /// Two rules can fire for the same state and trigger.
    #[error("rules[{first}] and rules[{second}] both match ({screen}, {trigger})")]
    Conflict { first: usize, second: usize, screen: String, trigger: String },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> LoadError {
    LoadError::Schema { path: path.into(), message: message.into() }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppDocument {
    app_id: String,
    initial_screen: String,
    #[serde(default)]
    initial_vars: BTreeMap<String, String>,
    screens: Vec<Screen>,
    #[serde(default)]
    rules: Vec<TransitionRule>,
}

/// Parses and validates an app-definition document.
pub fn load_app(document: &str) -> Result<AppDefinition, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: AppDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    validate(doc)
}

impl AppDefinition {
    /// Serializes back to the document format accepted by [`load_app`].
    pub fn to_json(&self) -> String {
        let doc = AppDocument {
            app_id: self.app_id.clone(),
            initial_screen: self.initial_screen.clone(),
            initial_vars: self.initial_vars.clone(),
            screens: self.screen_order.iter().map(|s| self.screens[s].clone()).collect(),
            rules: self.rules.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("app serializes")
    }
}

fn validate(doc: AppDocument) -> Result<AppDefinition, LoadError> {
    if doc.app_id.is_empty() {
        return Err(schema("app_id", "empty app_id"));
    }
    let mut screens = BTreeMap::new();
    let mut order = Vec::new();
    for (si, screen) in doc.screens.iter().enumerate() {
        let sp = format!("screens[{si}]");
        if screens.contains_key(&screen.screen_id) {
            return Err(schema(format!("{sp}.screen_id"), format!("duplicate screen_id {}", screen.screen_id)));
        }
        let mut ids = BTreeSet::new();
        for (ei, el) in screen.elements.iter().enumerate() {
            let ep = format!("{sp}.elements[{ei}]");
            if !ids.insert(el.element_id.as_str()) {
                return Err(schema(format!("{ep}.element_id"), format!("duplicate element_id {}", el.element_id)));
            }
            if !el.bounds.is_valid() {
                return Err(schema(
                    format!("{ep}.bounds"),
                    format!("bounds {:?} must satisfy 0 <= min < max <= 1", <[f64; 4]>::from(el.bounds)),
                ));
            }
        }
        if screen.scroll_window == Some(0) {
            return Err(schema(format!("{sp}.scroll_window"), "scroll_window must be at least 1"));
        }
        screens.insert(screen.screen_id.clone(), screen.clone());
        order.push(screen.screen_id.clone());
    }
    if !screens.contains_key(&doc.initial_screen) {
        return Err(schema("initial_screen", format!("unknown screen {}", doc.initial_screen)));
    }
    for (si, screen) in doc.screens.iter().enumerate() {
        if let Some(parent) = &screen.parent {
            if !screens.contains_key(parent) {
                return Err(schema(format!("screens[{si}].parent"), format!("unknown screen {parent}")));
            }
        }
    }
    for (ri, rule) in doc.rules.iter().enumerate() {
        let rp = format!("rules[{ri}]");
        let Some(screen) = screens.get(&rule.on.screen) else {
            return Err(schema(format!("{rp}.on.screen"), format!("unknown screen {}", rule.on.screen)));
        };
        match &rule.on.trigger {
            Trigger::Tap(e) if screen.element(e).is_none() => {
                return Err(schema(format!("{rp}.on.trigger"), format!("no element {e} on {}", screen.screen_id)));
            }
            Trigger::Type(e) => match screen.element(e) {
                Some(el) if el.kind == ElementKind::TextField => {}
                _ => {
                    return Err(schema(
                        format!("{rp}.on.trigger"),
                        format!("no text field {e} on {}", screen.screen_id),
                    ))
                }
            },
            Trigger::Timer(t) if !(t.is_finite() && *t >= 0.0) => {
                return Err(schema(format!("{rp}.on.trigger"), format!("bad timer threshold {t}")));
            }
            _ => {}
        }
        if let Some(next) = &rule.effect.next_screen {
            if !screens.contains_key(next) {
                return Err(schema(format!("{rp}.effect.next_screen"), format!("unknown screen {next}")));
            }
        }
    }
    check_conflicts(&doc.rules)?;

    Ok(AppDefinition {
        app_id: doc.app_id,
        initial_screen: doc.initial_screen,
        initial_vars: doc.initial_vars,
        screens,
        screen_order: order,
        rules: doc.rules,
    })
}

/// Integer interval `[lo, hi]` satisfying an ordering comparison.
fn interval(op: CmpOp, n: i64) -> Option<(i64, i64)> {
    match op {
        CmpOp::Lt => Some((i64::MIN, n.saturating_sub(1))),
        CmpOp::Le => Some((i64::MIN, n)),
        CmpOp::Gt => Some((n.saturating_add(1), i64::MAX)),
        CmpOp::Ge => Some((n, i64::MAX)),
        CmpOp::Eq | CmpOp::Ne => None,
    }
}

/// True when no variable value can satisfy both conditions.
fn contradict(a: &Condition, b: &Condition) -> bool {
    use CmpOp::*;
    debug_assert_eq!(a.var, b.var);
    match (a.op, b.op) {
        (Eq, Eq) => a.value != b.value,
        (Eq, Ne) | (Ne, Eq) => a.value == b.value,
        (Ne, _) | (_, Ne) => false,
        (Eq, op) | (op, Eq) => {
            let (point, ord) = if a.op == Eq { (a, b) } else { (b, a) };
            !ord_condition_holds(&point.value, op, &ord.value)
        }
        (x, y) => match (a.value.parse::<i64>(), b.value.parse::<i64>()) {
            (Ok(na), Ok(nb)) => {
                let (alo, ahi) = interval(x, na).expect("ordering op");
                let (blo, bhi) = interval(y, nb).expect("ordering op");
                alo.max(blo) > ahi.min(bhi)
            }
            // A non-integer bound makes its condition unsatisfiable.
            _ => true,
        },
    }
}

fn ord_condition_holds(value: &str, op: CmpOp, bound: &str) -> bool {
    let c = Condition { var: String::new(), op, value: bound.to_string() };
    let vars = BTreeMap::from([(String::new(), value.to_string())]);
    c.holds(&vars)
}

/// Guards are exclusive when some pair of their conditions on the same
/// variable cannot both hold. This is conservative: exclusivity that needs
/// three or more conditions to see is reported as a conflict.
fn exclusive(a: &TransitionRule, b: &TransitionRule) -> bool {
    let (Some(ga), Some(gb)) = (&a.guard, &b.guard) else {
        return false;
    };
    ga.iter().any(|ca| gb.iter().any(|cb| ca.var == cb.var && contradict(ca, cb)))
}

fn check_conflicts(rules: &[TransitionRule]) -> Result<(), LoadError> {
    for (i, a) in rules.iter().enumerate() {
        for (j, b) in rules.iter().enumerate().skip(i + 1) {
            if a.on.screen == b.on.screen && a.on.trigger.key() == b.on.trigger.key() && !exclusive(a, b) {
                return Err(LoadError::Conflict {
                    first: i,
                    second: j,
                    screen: a.on.screen.clone(),
                    trigger: a.on.trigger.key(),
                });
            }
        }
    }
    Ok(())
}
