use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const MINIMAL: &str = r#"{
  "app_id": "mini",
  "initial_screen": "home",
  "initial_vars": {},
  "screens": [
    {"screen_id": "home", "parent": null, "elements": [
      {"element_id": "ok", "kind": "button", "content": "OK", "bounds": [0.1, 0.1, 0.9, 0.3], "focusable": false, "visible": true}
    ]}
  ],
  "rules": []
}"#;

fn with_rules(rules: &str) -> String {
    format!(
        r#"{{
  "app_id": "mini",
  "initial_screen": "home",
  "initial_vars": {{"n": "1"}},
  "screens": [
    {{"screen_id": "home", "parent": null, "elements": [
      {{"element_id": "ok", "kind": "button", "content": "OK", "bounds": [0.1, 0.1, 0.9, 0.3], "focusable": false, "visible": true}}
    ]}},
    {{"screen_id": "next", "parent": "home", "elements": []}}
  ],
  "rules": [{rules}]
}}"#
    )
}

#[test]
fn minimal_app_loads() {
    let app = load_app(MINIMAL).unwrap();
    assert_eq!(app.screens.len(), 1);
    assert_eq!(app.screen("home").unwrap().elements.len(), 1);
}

#[test]
fn out_of_range_bounds_rejected_with_path() {
    let doc = MINIMAL.replace("[0.1, 0.1, 0.9, 0.3]", "[0.1, 0.1, 1.2, 0.3]");
    match load_app(&doc) {
        Err(LoadError::Schema { path, .. }) => assert_eq!(path, "screens[0].elements[0].bounds"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let inverted = MINIMAL.replace("[0.1, 0.1, 0.9, 0.3]", "[0.9, 0.1, 0.1, 0.3]");
    assert!(load_app(&inverted).is_err());
}

#[test]
fn unknown_keys_rejected_with_path() {
    let doc = MINIMAL.replace(r#""focusable": false"#, r#""focusable": false, "color": "red""#);
    match load_app(&doc) {
        Err(LoadError::Schema { path, message }) => {
            assert!(path.starts_with("screens[0].elements[0]"), "{path}");
            assert!(message.contains("color"), "{message}");
        }
        other => panic!("expected schema error, got {other:?}"),
    }
    let top = MINIMAL.replacen(r#""rules": []"#, r#""rules": [], "theme": 1"#, 1);
    assert!(load_app(&top).is_err());
}

#[test]
fn ambiguous_rules_conflict() {
    let rule = r#"{"on": {"screen": "home", "trigger": {"tap": "ok"}}, "guard": null, "effect": {"next_screen": "next", "set_vars": {}}}"#;
    let doc = with_rules(&format!("{rule}, {rule}"));
    match load_app(&doc) {
        Err(LoadError::Conflict { first, second, screen, .. }) => {
            assert_eq!((first, second, screen.as_str()), (0, 1, "home"));
        }
        other => panic!("expected conflict, got {other:?}"),
    }
}

#[test]
fn exclusive_guards_are_not_conflicts() {
    let guarded = |op: &str, v: &str| {
        format!(
            r#"{{"on": {{"screen": "home", "trigger": {{"tap": "ok"}}}}, "guard": [{{"var": "n", "op": "{op}", "value": "{v}"}}], "effect": {{"set_vars": {{"n": "0"}}}}}}"#
        )
    };
    assert!(load_app(&with_rules(&format!("{}, {}", guarded("eq", "1"), guarded("eq", "2")))).is_ok());
    assert!(load_app(&with_rules(&format!("{}, {}", guarded("eq", "1"), guarded("ne", "1")))).is_ok());
    assert!(load_app(&with_rules(&format!("{}, {}", guarded("lt", "3"), guarded("ge", "3")))).is_ok());
    assert!(load_app(&with_rules(&format!("{}, {}", guarded("eq", "5"), guarded("lt", "3")))).is_ok());
    // Overlapping ranges can both hold.
    assert!(matches!(
        load_app(&with_rules(&format!("{}, {}", guarded("lt", "5"), guarded("gt", "1")))),
        Err(LoadError::Conflict { .. })
    ));
    assert!(matches!(
        load_app(&with_rules(&format!("{}, {}", guarded("ne", "1"), guarded("ne", "2")))),
        Err(LoadError::Conflict { .. })
    ));
}

#[test]
fn dangling_references_rejected() {
    let bad_screen = r#"{"on": {"screen": "nowhere", "trigger": {"tap": "ok"}}, "guard": null, "effect": {}}"#;
    assert!(
        matches!(load_app(&with_rules(bad_screen)), Err(LoadError::Schema { path, .. }) if path == "rules[0].on.screen")
    );
    let bad_el = r#"{"on": {"screen": "home", "trigger": {"tap": "nope"}}, "guard": null, "effect": {}}"#;
    assert!(load_app(&with_rules(bad_el)).is_err());
    let bad_next =
        r#"{"on": {"screen": "home", "trigger": {"tap": "ok"}}, "guard": null, "effect": {"next_screen": "x"}}"#;
    assert!(
        matches!(load_app(&with_rules(bad_next)), Err(LoadError::Schema { path, .. }) if path == "rules[0].effect.next_screen")
    );
    let type_button = r#"{"on": {"screen": "home", "trigger": {"type": "ok"}}, "guard": null, "effect": {}}"#;
    assert!(load_app(&with_rules(type_button)).is_err());
    let bad_initial = MINIMAL.replace(r#""initial_screen": "home""#, r#""initial_screen": "away""#);
    assert!(load_app(&bad_initial).is_err());
}

#[test]
fn bundled_apps_load_and_round_trip() {
    let apps = bundled::apps();
    assert!(apps.len() >= 5);
    for app in &apps {
        assert!((5..=15).contains(&app.screens.len()), "{} has {} screens", app.app_id, app.screens.len());
        assert_eq!(load_app(&app.to_json()).unwrap(), *app);
    }
}

#[test]
fn reset_is_initial_and_deterministic() {
    let app = bundled::app("settings").unwrap();
    let s = reset(&app, 0);
    assert_eq!(s.screen_id, "home");
    assert_eq!(s.clock, 0.0);
    assert!(s.terminated.is_none());
    let a = serde_json::to_vec(&reset(&app, 7)).unwrap();
    let b = serde_json::to_vec(&reset(&app, 7)).unwrap();
    assert_eq!(a, b);
}

fn center_of(app: &AppDefinition, state: &EnvState, element_id: &str) -> Action {
    let obs = render_text(app, state);
    let el = obs.elements.iter().find(|e| e.element_id == element_id).expect("element visible");
    let (x, y) = el.bounds.center();
    Action::Click { x, y }
}

#[test]
fn click_follows_rule() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    let (s1, ev) = step(&app, &s0, &center_of(&app, &s0, "display_btn")).unwrap();
    assert_eq!(s1.screen_id, "display");
    assert!(ev.navigated && !ev.no_effect);
}

#[test]
fn dead_click_is_no_op() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    let (s1, ev) = step(&app, &s0, &Action::Click { x: 0.99, y: 0.99 }).unwrap();
    assert_eq!(s1, s0);
    assert!(ev.no_effect);
    assert!(ev.hit.is_none());
    // A label with no rule is hit but does nothing.
    let (s2, ev) = step(&app, &s0, &Action::Click { x: 0.5, y: 0.05 }).unwrap();
    assert_eq!(s2, s0);
    assert_eq!(ev.hit.as_deref(), Some("title"));
    assert!(ev.no_effect);
}

#[test]
fn wait_advances_clock_and_fires_timers() {
    let app = bundled::app("notes").unwrap();
    let s0 = reset(&app, 0);
    let (s1, _) = step(&app, &s0, &Action::Wait { seconds: 5.0 }).unwrap();
    assert_eq!(s1.clock, s0.clock + 5.0);
    assert_eq!(s1.screen_id, "home");

    let (syncing, _) = step(&app, &s0, &center_of(&app, &s0, "sync_btn")).unwrap();
    assert_eq!(syncing.screen_id, "syncing");
    let (early, ev) = step(&app, &syncing, &Action::Wait { seconds: 1.0 }).unwrap();
    assert_eq!(early.screen_id, "syncing");
    assert!(ev.rule.is_none());
    let (done, ev) = step(&app, &early, &Action::Wait { seconds: 1.0 }).unwrap();
    assert_eq!(done.screen_id, "synced");
    assert_eq!(done.vars["synced"], "true");
    assert!(ev.rule.is_some());
}

#[test]
fn typing_requires_focused_text_field() {
    let app = bundled::app("contacts").unwrap();
    let s0 = reset(&app, 0);
    let typed = Action::Type { text: "Dan Brown".into() };
    let (same, ev) = step(&app, &s0, &typed).unwrap();
    assert_eq!(same, s0);
    assert!(ev.no_effect);

    let (search, _) = step(&app, &s0, &center_of(&app, &s0, "search_btn")).unwrap();
    let (focused, _) = step(&app, &search, &center_of(&app, &search, "search_query")).unwrap();
    assert_eq!(focused.focused_element.as_deref(), Some("search_query"));
    let (miss, ev) = step(&app, &focused, &Action::Type { text: "Nobody".into() }).unwrap();
    assert!(ev.typed);
    assert_eq!(miss.vars["search_query"], "Nobody");
    assert_eq!(render_text(&app, &miss).elements[1].content, "Query: Nobody");
    let (hit, _) = step(&app, &focused, &typed).unwrap();
    assert_eq!(hit.screen_id, "contact_dan");
    assert!(hit.focused_element.is_none());
}

#[test]
fn back_and_home_navigation() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    let back = Action::SystemButton { button: SystemButton::Back };
    let home = Action::SystemButton { button: SystemButton::Home };
    let (same, ev) = step(&app, &s0, &back).unwrap();
    assert!(ev.no_effect && same == s0, "Back at the root is a no-op");
    let (net, _) = step(&app, &s0, &center_of(&app, &s0, "network_btn")).unwrap();
    let (wifi, _) = step(&app, &net, &center_of(&app, &net, "wifi_btn")).unwrap();
    assert_eq!(step(&app, &wifi, &back).unwrap().0.screen_id, "network");
    assert_eq!(step(&app, &wifi, &home).unwrap().0.screen_id, "home");
    let menu = Action::SystemButton { button: SystemButton::Menu };
    assert!(step(&app, &wifi, &menu).unwrap().1.no_effect);
}

#[test]
fn terminated_state_rejects_steps() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    let (done, _) = step(&app, &s0, &Action::Terminate { status: TerminalStatus::Success }).unwrap();
    assert_eq!(done.terminated, Some(TerminalStatus::Success));
    assert_eq!(step(&app, &done, &Action::Wait { seconds: 1.0 }), Err(StepError::Terminated));
}

#[test]
fn invalid_actions_rejected() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    for a in [
        Action::Click { x: 1.5, y: 0.5 },
        Action::Click { x: f64::NAN, y: 0.5 },
        Action::Wait { seconds: 0.0 },
        Action::Swipe { x1: 0.0, y1: -0.1, x2: 0.5, y2: 0.5 },
    ] {
        assert!(matches!(step(&app, &s0, &a), Err(StepError::InvalidAction(_))), "{a:?}");
    }
}

#[test]
fn answer_sets_text_without_terminating() {
    let app = bundled::app("settings").unwrap();
    let (s, _) = step(&app, &reset(&app, 0), &Action::Answer { text: "Classic".into() }).unwrap();
    assert_eq!(s.answer_text.as_deref(), Some("Classic"));
    assert!(s.terminated.is_none());
}

fn overlap_screen() -> Screen {
    let el = |id: &str, b: [f64; 4], visible: bool| UIElement {
        element_id: id.into(),
        kind: ElementKind::Button,
        content: id.into(),
        bounds: b.into(),
        focusable: false,
        visible,
    };
    Screen {
        screen_id: "s".into(),
        parent: None,
        elements: vec![
            el("under", [0.0, 0.0, 0.6, 0.6], true),
            el("over", [0.4, 0.4, 1.0, 1.0], true),
            el("ghost", [0.0, 0.0, 1.0, 1.0], false),
        ],
        scroll_window: None,
    }
}

#[test]
fn hit_test_cases() {
    let s = overlap_screen();
    assert_eq!(s.hit_test(0, 0.1, 0.1).map(|e| e.element_id.as_str()), Some("under"));
    assert_eq!(s.hit_test(0, 0.5, 0.5).map(|e| e.element_id.as_str()), Some("over"));
    assert_eq!(s.hit_test(0, 0.9, 0.1), None, "hidden elements are not hit");
}

#[test]
fn render_skips_hidden_elements_and_is_pure() {
    let app = bundled::app("settings").unwrap();
    let s0 = reset(&app, 0);
    let home = app.screen("home").unwrap();
    let obs = render_text(&app, &s0);
    assert_eq!(obs.elements.len(), home.elements.iter().filter(|e| e.visible).count());
    assert!(obs.elements.iter().all(|e| e.element_id != "developer_options"));
    assert_eq!(obs, render_text(&app, &s0));
}

#[test]
fn render_three_visible_one_hidden() {
    let screen = Screen {
        elements: {
            let mut v = overlap_screen().elements;
            v.push(UIElement { element_id: "third".into(), ..v[0].clone() });
            v
        },
        ..overlap_screen()
    };
    let app = AppDefinition {
        app_id: "x".into(),
        initial_screen: "s".into(),
        initial_vars: Default::default(),
        screens: [("s".to_string(), screen)].into(),
        screen_order: vec!["s".into()],
        rules: vec![],
    };
    let obs = render_text(&app, &reset(&app, 0));
    let ids: Vec<_> = obs.elements.iter().map(|e| e.element_id.as_str()).collect();
    assert_eq!(ids, ["under", "over", "third"]);
}

#[test]
fn scrolling_shifts_list_window() {
    let app = bundled::app("settings").unwrap();
    let mut s = reset(&app, 0);
    s.screen_id = "ringtone".into();
    let screen = app.screen("ringtone").unwrap();
    let items: Vec<&UIElement> = screen.elements.iter().filter(|e| e.kind == ElementKind::ListItem).collect();
    let window = screen.scroll_window.unwrap();
    let up = Direction::Up.canonical_swipe();
    let down = Direction::Down.canonical_swipe();
    for expected_offset in 0..=screen.max_scroll() {
        let obs = render_text(&app, &s);
        let listed: Vec<_> = obs.elements.iter().filter(|e| e.kind == ElementKind::ListItem).collect();
        assert_eq!(listed.len(), window);
        // First visible item is the one at the scroll offset, drawn in slot 0.
        assert_eq!(listed[0].element_id, items[expected_offset].element_id);
        assert_eq!(listed[0].bounds, items[0].bounds);
        if expected_offset < screen.max_scroll() {
            let (next, ev) = step(&app, &s, &up).unwrap();
            assert!(ev.scrolled);
            s = next;
        }
    }
    let (clamped, ev) = step(&app, &s, &up).unwrap();
    assert!(ev.no_effect && clamped == s, "scrolling past the end is a no-op");
    let (back, _) = step(&app, &s, &down).unwrap();
    assert_eq!(back.scroll_offset, screen.max_scroll() - 1);
}

#[test]
fn fill_template_cases() {
    let vars = [("a".to_string(), "1".to_string())].into();
    assert_eq!(fill_template("x {a} y {b}", &vars), "x 1 y ");
    assert_eq!(fill_template("open {brace", &vars), "open {brace");
    assert_eq!(fill_template("plain", &vars), "plain");
}

fn random_action(rng: &mut impl Rng) -> Action {
    match rng.gen_range(0..7) {
        0..=2 => Action::Click { x: rng.gen(), y: rng.gen() },
        3 => Action::Swipe { x1: rng.gen(), y1: rng.gen(), x2: rng.gen(), y2: rng.gen() },
        4 => Action::Type { text: ["Dan Brown", "Tokyo", "Alice Smith", ""][rng.gen_range(0..4)].into() },
        5 => Action::SystemButton { button: SystemButton::ALL[rng.gen_range(0..4)] },
        _ => Action::Wait { seconds: [1.0, 2.0, 5.0][rng.gen_range(0..3)] },
    }
}

#[test]
fn random_walks_preserve_invariants() {
    for app in bundled::apps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = reset(&app, 0);
        for _ in 0..10_000 {
            let action = random_action(&mut rng);
            let (next, events) = step(&app, &state, &action).unwrap();
            check_state(&app, &next).unwrap_or_else(|e| panic!("{}: {e} after {action:?}", app.app_id));
            assert_eq!(step(&app, &state, &action).unwrap(), (next.clone(), events.clone()), "determinism");
            if events.no_effect {
                assert_eq!(
                    (&next.vars, &next.screen_id, &next.focused_element),
                    (&state.vars, &state.screen_id, &state.focused_element)
                );
            }
            state = next;
        }
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dead_taps_never_mutate(x in 0.0f64..=1.0, y in 0.0f64..=1.0, screen_idx in 0usize..10) {
            let app = bundled::app("settings").unwrap();
            let mut s = reset(&app, 0);
            s.screen_id = app.screen_order[screen_idx % app.screen_order.len()].clone();
            let (next, ev) = step(&app, &s, &Action::Click { x, y }).unwrap();
            if ev.rule.is_none() && next.focused_element == s.focused_element {
                prop_assert_eq!(next, s);
            }
        }

        #[test]
        fn hit_test_matches_brute_force(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let s = overlap_screen();
            let expected = s.elements.iter().rfind(|e| e.visible && e.bounds.contains(x, y));
            prop_assert_eq!(s.hit_test(0, x, y), expected);
        }
    }
}
