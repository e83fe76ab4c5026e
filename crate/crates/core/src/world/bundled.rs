//! Apps and task sets compiled into the library.

use super::{load_app, AppDefinition, AppSet};

pub const APP_DOCUMENTS: [(&str, &str); 5] = [
    ("clock", include_str!("../../apps/clock.json")),
    ("contacts", include_str!("../../apps/contacts.json")),
    ("notes", include_str!("../../apps/notes.json")),
    ("settings", include_str!("../../apps/settings.json")),
    ("shop", include_str!("../../apps/shop.json")),
];

/// Five short tasks, one per app, used for the learning demonstration.
pub const EASY_5: &str = include_str!("../../tasks/easy-5.json");

/// Hand-written tasks covering every goal atom kind.
pub const MANUAL_TASKS: &str = include_str!("../../tasks/manual.json");

/// Plausible-sounding tasks whose goals no action sequence reaches, the kind
/// a generative labeler can produce. Used as filter noise in ablations.
pub const UNVERIFIED_TASKS: &str = include_str!("../../tasks/unverified.json");

pub fn app(app_id: &str) -> Option<AppDefinition> {
    APP_DOCUMENTS.iter().find(|(id, _)| *id == app_id).map(|(_, doc)| load_app(doc).expect("bundled app is valid"))
}

pub fn apps() -> Vec<AppDefinition> {
    APP_DOCUMENTS.iter().map(|(_, doc)| load_app(doc).expect("bundled app is valid")).collect()
}

pub fn app_set() -> AppSet {
    AppSet::from_apps(apps()).expect("bundled app ids are unique")
}
