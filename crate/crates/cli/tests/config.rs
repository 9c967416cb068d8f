use ctglab::config::{parse_grid, resolve, Overrides};
use serde::Deserialize;

#[derive(Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct Inner {
    a: u32,
    #[serde(default)]
    b: f64,
}

#[derive(Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct Outer {
    name: String,
    inner: Inner,
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "name = \"x\"\n[inner]\na = 1\nb = 2.5\n").unwrap();
    let mut o = Overrides::new();
    o.set("inner.a", Some(7u32)).set::<f64>("inner.b", None);
    let out: Outer = resolve(Some(&path), &o).unwrap();
    assert_eq!(out, Outer { name: "x".into(), inner: Inner { a: 7, b: 2.5 } });

    let json = dir.path().join("c.json");
    std::fs::write(&json, r#"{"name": "y", "inner": {"a": 2}}"#).unwrap();
    let out: Outer = resolve(Some(&json), &Overrides::new()).unwrap();
    assert_eq!(out.inner.a, 2);
}

#[test]
fn unknown_fields_name_the_field() {
    let mut o = Overrides::new();
    o.set("name", Some("z")).set("inner.a", Some(1)).set("inner.typo", Some(3));
    let err = resolve::<Outer>(None, &o).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("typo"));

    let mut o = Overrides::new();
    o.set("name", Some("z")).set("inner.a", Some("seven"));
    let err = resolve::<Outer>(None, &o).unwrap_err().to_string();
    assert!(err.contains("inner.a"), "{err}");
}

#[test]
fn grids() {
    assert_eq!(parse_grid("5,8,10").unwrap(), vec![5.0, 8.0, 10.0]);
    let g = parse_grid("0.4:1.0:0.1").unwrap();
    assert_eq!(g, vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    assert!(parse_grid("0.4:0.1:0.1").is_err());
    assert!(parse_grid("a,b").is_err());
}

#[test]
fn decode_specs() {
    use ctglab::commands::parse_decode_spec;
    use ctglab_core::decode::Method;

    let c = parse_decode_spec("contrastive:k=8,alpha=0.6", 128, 3).unwrap();
    assert_eq!((c.method, c.k, c.alpha, c.max_new_tokens, c.seed), (Method::Contrastive, 8, 0.6, 128, 3));
    let c = parse_decode_spec("beam:b=4", 16, 0).unwrap();
    assert_eq!((c.method, c.beam_width), (Method::Beam, 4));
    assert_eq!(parse_decode_spec("top-k:k=1", 16, 0).unwrap().method, Method::TopK);
    for bad in ["sideways", "beam:b", "beam:width=3", "contrastive:alpha=2"] {
        let err = parse_decode_spec(bad, 16, 0).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}");
    }
}
