use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::eval::{Atom, GoalPredicate};
use crate::transport::{RetryPolicy, TransportError};
use crate::world::{bundled, load_app};

fn five_buttons() -> AppDefinition {
    let elements: Vec<String> = (0..5)
        .map(|i| {
            let y = 0.1 + 0.15 * i as f64;
            format!(
                r#"{{"element_id":"b{i}","kind":"button","content":"B{i}","bounds":[0.1,{y},0.9,{}],"focusable":false,"visible":true}}"#,
                y + 0.1
            )
        })
        .collect();
    let doc = format!(
        r#"{{"app_id":"five","initial_screen":"home","initial_vars":{{}},"screens":[{{"screen_id":"home","parent":null,"elements":[{}]}}],"rules":[]}}"#,
        elements.join(",")
    );
    load_app(&doc).unwrap()
}

#[test]
fn novelty_first_taps_are_distinct() {
    let app = five_buttons();
    for seed in 0..20 {
        let cfg = ExplorationConfig { max_steps: 30, novelty_bias: 1.0, revisit_cap: 10, seed };
        let walk = explore(&app, &cfg, &mut Coverage::default());
        let taps: Vec<&String> = walk.targets.iter().filter(|(_, t)| t.starts_with('b')).map(|(_, t)| t).collect();
        let first: BTreeSet<&String> = taps.iter().take(5).copied().collect();
        assert_eq!(first.len(), 5, "seed {seed}: {taps:?}");
        // All nine targets (five buttons, four swipes) come before any repeat.
        let head: BTreeSet<&Pair> = walk.targets.iter().take(9).collect();
        assert_eq!(head.len(), 9);
    }
}

#[test]
fn revisit_cap_one_never_repeats() {
    for app in bundled::apps() {
        for seed in 0..30 {
            let cfg = ExplorationConfig { max_steps: 40, novelty_bias: 0.3, revisit_cap: 1, seed };
            let walk = explore(&app, &cfg, &mut Coverage::default());
            let unique: BTreeSet<&Pair> = walk.targets.iter().collect();
            assert_eq!(unique.len(), walk.targets.len());
        }
    }
}

#[test]
fn walks_are_seeded() {
    let app = bundled::app("notes").unwrap();
    let cfg = ExplorationConfig { max_steps: 12, novelty_bias: 0.5, revisit_cap: 2, seed: 4 };
    let a = explore(&app, &cfg, &mut Coverage::default());
    let b = explore(&app, &cfg, &mut Coverage::default());
    assert_eq!(a, b);
    assert_eq!(a.states.len(), a.actions.len() + 1);
    assert!(ExplorationConfig { revisit_cap: 0, ..cfg.clone() }.validate().is_err());
    assert!(ExplorationConfig { novelty_bias: 1.5, ..cfg }.validate().is_err());
}

fn click(app: &AppDefinition, state: &EnvState, id: &str) -> (Action, EnvState) {
    let obs = crate::world::render_text(app, state);
    let (x, y) = obs.elements.iter().find(|e| e.element_id == id).unwrap().bounds.center();
    let a = Action::Click { x, y };
    let (next, _) = step(app, state, &a).unwrap();
    (a, next)
}

fn scripted_walk(app: &AppDefinition, ids: &[&str]) -> ExplorationTrajectory {
    let mut state = reset(app, 0);
    let mut walk = ExplorationTrajectory {
        app_id: app.app_id.clone(),
        seed: 0,
        actions: vec![],
        targets: vec![],
        states: vec![state.clone()],
    };
    for id in ids {
        let (a, next) = click(app, &state, id);
        walk.targets.push((state.screen_id.clone(), id.to_string()));
        walk.actions.push(a);
        walk.states.push(next.clone());
        state = next;
    }
    walk
}

#[test]
fn alarm_walk_labels_as_set_the_alarm() {
    let app = bundled::app("clock").unwrap();
    let walk = scripted_walk(&app, &["alarms_btn", "add_alarm", "save"]);
    let task = reverse_label(&app, &walk, &TemplateLabeler, "clock-0000".into()).unwrap();
    assert_eq!(task.instruction, "Set the alarm");
    assert_eq!(task.goal, GoalPredicate::new(vec![Atom::VarEquals { name: "alarm_set".into(), value: "true".into() }]));
    assert_eq!(task.origin, Origin::Explored);
    assert_eq!(task.complexity, None);
}

#[test]
fn template_examples() {
    let app = bundled::app("settings").unwrap();
    let walk = scripted_walk(&app, &["bluetooth_btn", "bluetooth_toggle"]);
    assert_eq!(TemplateLabeler.label(&app, &walk).unwrap().0, "Turn on bluetooth");
    let walk = scripted_walk(&app, &["about_btn"]);
    let (text, goal) = TemplateLabeler.label(&app, &walk).unwrap();
    assert_eq!(text, "Open the About phone screen");
    assert_eq!(goal.all, vec![Atom::OnScreen("about".into())]);

    let contacts = bundled::app("contacts").unwrap();
    let walk = scripted_walk(&contacts, &["contact_bob", "favorite_toggle"]);
    assert_eq!(TemplateLabeler.label(&contacts, &walk).unwrap().0, "Mark bob as a favorite");
}

#[test]
fn zero_delta_and_empty_walks_get_no_task() {
    let app = bundled::app("settings").unwrap();
    // Toggle twice: back where it started.
    let walk = scripted_walk(&app, &["bluetooth_btn", "bluetooth_toggle", "bluetooth_toggle"]);
    assert!(!walk.actions.is_empty());
    let mut walk_home = walk.clone();
    let (a, s) = (Action::SystemButton { button: crate::world::SystemButton::Home }, walk.final_state().clone());
    let (home, _) = step(&app, &s, &a).unwrap();
    walk_home.actions.push(a);
    walk_home.states.push(home);
    assert!(reverse_label(&app, &walk_home, &TemplateLabeler, "x".into()).is_none());
    let empty = scripted_walk(&app, &[]);
    assert!(reverse_label(&app, &empty, &TemplateLabeler, "x".into()).is_none());
}

struct Liar;

impl Labeler for Liar {
    fn label(&self, _: &AppDefinition, _: &ExplorationTrajectory) -> Option<(String, GoalPredicate)> {
        Some((
            "Turn on wifi".into(),
            GoalPredicate::new(vec![Atom::VarEquals { name: "wifi".into(), value: "on".into() }]),
        ))
    }
}

#[test]
fn self_consistency_gate() {
    let app = bundled::app("settings").unwrap();
    let walk = scripted_walk(&app, &["bluetooth_btn", "bluetooth_toggle"]);
    assert!(reverse_label(&app, &walk, &Liar, "x".into()).is_none());
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { attempts: 3, backoff: Duration::from_millis(1) }
}

#[test]
fn external_labeler_uses_response_and_retries() {
    let app = bundled::app("settings").unwrap();
    let walk = scripted_walk(&app, &["bluetooth_btn", "bluetooth_toggle"]);
    let calls = std::sync::Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let flaky = move |body: &str| {
        let req: LabelRequest = serde_json::from_str(body).unwrap();
        assert_eq!(req.delta.len(), 1);
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(TransportError::Status(503))
        } else {
            Ok(r#"{"instruction":"Enable Bluetooth please"}"#.to_string())
        }
    };
    let labeler = ExternalLabeler { transport: Box::new(flaky), retry: fast_retry() };
    let task = reverse_label(&app, &walk, &labeler, "x".into()).unwrap();
    assert_eq!(task.instruction, "Enable Bluetooth please");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let down = ExternalLabeler {
        transport: Box::new(|_: &str| Err(TransportError::Io("refused".into()))),
        retry: fast_retry(),
    };
    assert!(reverse_label(&app, &walk, &down, "x".into()).is_none());

    let wrong_goal = r#"{"instruction":"Turn on wifi","goal":{"all":[{"var_equals":{"name":"wifi","value":"on"}}]}}"#;
    let liar = ExternalLabeler { transport: Box::new(move |_: &str| Ok(wrong_goal.to_string())), retry: fast_retry() };
    assert!(reverse_label(&app, &walk, &liar, "x".into()).is_none());

    let garbage = ExternalLabeler { transport: Box::new(|_: &str| Ok("not json".to_string())), retry: fast_retry() };
    assert!(reverse_label(&app, &walk, &garbage, "x".into()).is_none());
    assert!(parse_label_response(r#"{"instruction":"  "}"#).is_err());
}

#[test]
fn bundled_walks_yield_consistent_tasks() {
    let apps = bundled::app_set();
    let mut coverage = Coverage::default();
    let mut emitted = 0;
    for (i, app) in apps.iter().enumerate() {
        for seed in 0..20u64 {
            let cfg = ExplorationConfig { seed: seed * 7 + i as u64, ..ExplorationConfig::default() };
            let walk = explore(app, &cfg, &mut coverage);
            if let Some(t) = reverse_label(app, &walk, &TemplateLabeler, format!("{}-{seed:04}", app.app_id)) {
                assert!(t.goal.holds(app, walk.final_state()));
                t.validate(&apps).unwrap();
                emitted += 1;
            }
        }
    }
    assert!(emitted > 50, "{emitted} tasks from 100 walks");
}

proptest! {
    #[test]
    fn shared_coverage_is_monotone(seeds in prop::collection::vec(any::<u64>(), 1..8), bias in 0.0f64..=1.0) {
        let app = bundled::app("shop").unwrap();
        let mut coverage = Coverage::default();
        let mut prev: BTreeSet<Pair> = BTreeSet::new();
        for seed in seeds {
            let cfg = ExplorationConfig { max_steps: 8, novelty_bias: bias, revisit_cap: 2, seed };
            explore(&app, &cfg, &mut coverage);
            let now = coverage.triggered.get("shop").cloned().unwrap_or_default();
            prop_assert!(prev.is_subset(&now));
            prev = now;
        }
    }
}
