use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use oais_core::config::SetConfig;
use oais_core::harvest::{Chooser, OaiClient, OpenUrlAgent, RetryPolicy, Transport};
use oais_core::openurl::encode_pairs;
use oais_core::{GatewayConfig, SetSpec};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::Outcome;
use crate::common::TestServer;
use crate::fixtures::*;

fn with_sets(config: &mut GatewayConfig) {
    config.sets = SETS
        .iter()
        .map(|s| SetConfig {
            spec: SetSpec::new(*s).unwrap(),
            name: s.to_uppercase(),
        })
        .collect();
}

pub fn versioned_pair() -> Outcome {
    const CI: &str = "urn:isbn:90-70002-04-3";
    let mut store = Store::empty("pair");
    let original = store.ingest(
        CI,
        None,
        &[("ds1", "application/pdf", b"%PDF-1.4 original")],
        &[],
        at(0),
    );
    let version = store.ingest(
        CI,
        Some(&original),
        &[
            ("ds1", "application/pdf", b"%PDF-1.7 migrated"),
            ("ds2", "image/jpeg", b"\xff\xd8\xff"),
        ],
        &[],
        at(10),
    );
    if original == version {
        return Err(format!("both versions got AIP id {original}"));
    }
    let snapshot = store.archive.snapshot();
    let cis: Vec<String> = snapshot.aips().map(|a| a.ci_id().to_string()).collect();
    if cis != [CI, CI] {
        return Err(format!("CI ids {cis:?}"));
    }

    let server = TestServer::start(Arc::clone(&store.archive), |_| {});
    let transport: Arc<dyn Transport> = server.transport();
    let client =
        OaiClient::new(Arc::clone(&transport), server.oai_url()).with_retry(RetryPolicy::none());
    let agent = OpenUrlAgent::new(transport, server.openurl_url()).with_retry(RetryPolicy::none());
    let expect = |what: &str, got: (String, Streams), aip: &str| -> Result<(), String> {
        let want = store.by_aip(aip).streams_sorted();
        if got.0 != aip || got.1 != want {
            return Err(format!("{what} returned {} instead of {aip}", got.0));
        }
        Ok(())
    };

    let record = client.get_record(CI, NATIVE_PREFIX).ctx("GetRecord")?;
    expect("GetRecord", unpack_dip(&record.dip)?, &version)?;
    let latest = agent
        .order_dip(CI, &Chooser::Latest, None)
        .ctx("latest order")?;
    expect("latest-AIP order", unpack_dip(&latest.xml)?, &version)?;
    let older = agent
        .order_dip(CI, &Chooser::ByAip(original.clone()), None)
        .ctx("by-AIP order")?;
    expect("by-AIP order", unpack_dip(&older.xml)?, &original)?;
    Ok(format!("{original} then {version}"))
}

/// A window bound at second or day granularity, with the instant the
/// repository must use for it.
fn bound(instant: DateTime<Utc>, day: bool, upper: bool) -> (String, DateTime<Utc>) {
    if !day {
        return (stamp(instant), instant);
    }
    let date = instant.date_naive();
    let edge = if upper {
        date.and_hms_opt(23, 59, 59)
    } else {
        date.and_hms_opt(0, 0, 0)
    };
    (date.to_string(), edge.unwrap().and_utc())
}

fn listing_matches(
    listing: &Listing,
    oracle: &BTreeMap<String, &Ingested>,
    with_aip: bool,
) -> Result<(), String> {
    let mut seen = HashSet::new();
    for item in &listing.items {
        if !seen.insert(&item.identifier) {
            return Err(format!("{} listed twice", item.identifier));
        }
        let want = oracle
            .get(&item.identifier)
            .ok_or_else(|| format!("{} is outside the window", item.identifier))?;
        let mut sets = item.sets.clone();
        sets.sort();
        let mut want_sets = want.sets.clone();
        want_sets.sort();
        if item.datestamp != stamp(want.created) || sets != want_sets {
            return Err(format!(
                "{}: header {item:?}, expected {want:?}",
                item.identifier
            ));
        }
        if with_aip && item.aip.as_deref() != Some(want.aip.as_str()) {
            return Err(format!(
                "{}: AIP {:?}, expected {}",
                item.identifier, item.aip, want.aip
            ));
        }
    }
    if listing.items.len() != oracle.len() {
        return Err(format!(
            "{} records, oracle has {}",
            listing.items.len(),
            oracle.len()
        ));
    }
    Ok(())
}

pub fn window_oracle() -> Outcome {
    let store = Store::random(2, 600, 60, 240);
    let server = TestServer::start(Arc::clone(&store.archive), with_sets);
    let transport = server.transport();
    let base = server.oai_url();
    let mut rng = StdRng::seed_from_u64(20);
    let mut nonempty = 0;
    for q in 0..100 {
        let day = rng.gen_bool(0.1);
        let mut ends = [at(rng.gen_range(-10..260)), at(rng.gen_range(-10..260))];
        ends.sort();
        let from = rng.gen_bool(0.8).then(|| bound(ends[0], day, false));
        let until = rng.gen_bool(0.8).then(|| bound(ends[1], day, true));
        let set = match rng.gen_range(0..10) {
            0..=4 => None,
            9 => Some("unused".to_owned()),
            n => Some(SETS[n % 3].to_owned()),
        };
        let oracle = store.window(
            from.as_ref().map(|b| b.1),
            until.as_ref().map(|b| b.1),
            set.as_deref(),
        );
        for (verb, with_aip) in [("ListRecords", true), ("ListIdentifiers", false)] {
            let mut args = vec![
                ("verb", verb.to_owned()),
                ("metadataPrefix", NATIVE_PREFIX.to_owned()),
            ];
            if let Some((text, _)) = &from {
                args.push(("from", text.clone()));
            }
            if let Some((text, _)) = &until {
                args.push(("until", text.clone()));
            }
            if let Some(set) = &set {
                args.push(("set", set.clone()));
            }
            let listing = list_all(transport.as_ref(), &base, &args)
                .map_err(|e| format!("query {q}: {e}"))?;
            listing_matches(&listing, &oracle, with_aip)
                .map_err(|e| format!("query {q} {verb} {args:?}: {e}"))?;
        }
        nonempty += usize::from(!oracle.is_empty());
    }
    Ok(format!(
        "{} AIPs over {} CIs, 100 queries ({nonempty} non-empty)",
        store.model.len(),
        store.cis().len()
    ))
}

fn first_token(
    transport: &dyn Transport,
    base: &str,
    args: &[(&str, &str)],
) -> Result<Option<String>, String> {
    let verb = args[0].1;
    let (root, body) = get_xml(
        transport,
        &format!("{base}?{}", encode_pairs(args.iter().copied())),
    )?;
    Ok(page_items(&root, &body, verb)?.1)
}

fn error_code(
    transport: &dyn Transport,
    base: &str,
    args: &[(&str, &str)],
) -> Result<Option<String>, String> {
    let (root, _) = get_xml(
        transport,
        &format!("{base}?{}", encode_pairs(args.iter().copied())),
    )?;
    Ok(oai_error(&root))
}

pub fn pagination() -> Outcome {
    let store = Store::random(3, 500, 55, 200);
    let unpaged = TestServer::start(Arc::clone(&store.archive), |c| {
        with_sets(c);
        c.page_size = 100_000;
    });
    let mut rng = StdRng::seed_from_u64(30);
    let mut queries: Vec<Vec<(&str, String)>> = Vec::new();
    for verb in ["ListRecords", "ListIdentifiers"] {
        for q in 0..6 {
            let mut args = vec![
                ("verb", verb.to_owned()),
                ("metadataPrefix", NATIVE_PREFIX.to_owned()),
            ];
            if q > 0 {
                let lo = rng.gen_range(0..120);
                args.push(("from", stamp(at(lo))));
                args.push(("until", stamp(at(lo + rng.gen_range(20..120)))));
            }
            if q % 3 == 2 {
                args.push(("set", SETS[q % 3].to_owned()));
            }
            queries.push(args);
        }
    }
    let mut reference = Vec::new();
    for args in &queries {
        let listing = list_all(unpaged.transport().as_ref(), &unpaged.oai_url(), args)?;
        if listing.pages > 1 {
            return Err("unpaged server split a list".into());
        }
        reference.push(listing.items);
    }
    let full = reference[0].len();

    let mut pages_seen = 0;
    let mut replays = 0;
    for size in [1, 7, 37, 100] {
        let server = TestServer::start(Arc::clone(&store.archive), |c| {
            with_sets(c);
            c.page_size = size;
        });
        let transport = server.transport();
        let base = server.oai_url();
        for (args, want) in queries.iter().zip(&reference) {
            let listing = list_all(transport.as_ref(), &base, args)?;
            if &listing.items != want {
                return Err(format!(
                    "page size {size}, {args:?}: concatenation differs from the unpaged list"
                ));
            }
            let expected_pages = want.len().div_ceil(size).max(1);
            if !want.is_empty() && listing.pages != expected_pages {
                return Err(format!(
                    "page size {size}: {} pages for {} items",
                    listing.pages,
                    want.len()
                ));
            }
            if listing.pages > 1 && listing.complete_size != Some(want.len()) {
                return Err(format!(
                    "page size {size}: completeListSize {:?}",
                    listing.complete_size
                ));
            }
            pages_seen += listing.pages;
        }

        // Tokens are bound to their query.
        let token = first_token(
            transport.as_ref(),
            &base,
            &[
                ("verb", "ListRecords"),
                ("metadataPrefix", NATIVE_PREFIX),
                ("from", &stamp(at(5))),
                ("set", "physics"),
            ],
        )?;
        let Some(token) = token else {
            if size < full {
                return Err(format!(
                    "page size {size}: first page carried no resumption token"
                ));
            }
            continue;
        };
        replays += 1;
        let mut flipped = token.clone().into_bytes();
        let last = flipped.len() - 1;
        flipped[last] = if flipped[last] == b'A' { b'B' } else { b'A' };
        let flipped = String::from_utf8(flipped).unwrap();
        let mutations: [&[(&str, &str)]; 7] = [
            &[("verb", "ListIdentifiers"), ("resumptionToken", &token)],
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", &token),
                ("metadataPrefix", "pathways_dip_xml-ref"),
            ],
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", &token),
                ("from", &stamp(at(6))),
            ],
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", &token),
                ("until", &stamp(at(100))),
            ],
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", &token),
                ("set", "maths"),
            ],
            &[("verb", "ListRecords"), ("resumptionToken", &flipped)],
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", &token[..token.len() / 2]),
            ],
        ];
        for args in mutations {
            let code = error_code(transport.as_ref(), &base, args)?;
            if code.as_deref() != Some("badResumptionToken") {
                return Err(format!("page size {size}: {args:?} gave {code:?}"));
            }
        }
        let replay: &[(&str, &str)] = &[("verb", "ListRecords"), ("resumptionToken", &token)];
        if error_code(transport.as_ref(), &base, replay)?.is_some() {
            return Err(format!("page size {size}: unmodified token was refused"));
        }
    }
    if replays == 0 {
        return Err("no page size produced a token to replay".into());
    }
    Ok(format!(
        "{} queries, full list {full} records, {pages_seen} pages, tokens replayed at {replays} page sizes",
        queries.len()
    ))
}

struct Probe {
    server: usize,
    args: Vec<(&'static str, String)>,
    /// `Ok(verb)` or `Err(error code)`.
    expect: Result<&'static str, &'static str>,
}

fn probe(
    server: usize,
    args: &[(&'static str, &str)],
    expect: Result<&'static str, &'static str>,
) -> Probe {
    Probe {
        server,
        args: args.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        expect,
    }
}

fn check_envelope(body: &[u8], base: &str, probe: &Probe) -> Result<(), String> {
    let root = oais_core::xml::parse(body).map_err(|e| format!("not well-formed: {}", e.0))?;
    if !root.is(Some(OAI_NS), "OAI-PMH") {
        return Err(format!("root is {:?} {}", root.namespace, root.name));
    }
    let children: Vec<_> = root.elements().collect();
    let names: Vec<&str> = children.iter().map(|e| e.name.as_str()).collect();
    if names.len() != 3 || names[0] != "responseDate" || names[1] != "request" {
        return Err(format!("children {names:?}"));
    }
    DateTime::parse_from_rfc3339(&children[0].text())
        .ok()
        .filter(|_| children[0].text().ends_with('Z'))
        .ok_or_else(|| format!("responseDate {:?}", children[0].text()))?;
    let request = children[1];
    if request.text() != base {
        return Err(format!("request URL {:?}", request.text()));
    }
    let echoed: Vec<(String, String)> = request.attributes.clone();
    let illegal = matches!(probe.expect, Err("badVerb" | "badArgument"));
    if illegal && !echoed.is_empty() {
        return Err(format!("illegal request echoed {echoed:?}"));
    }
    if !illegal {
        for (k, v) in &probe.args {
            if !echoed.iter().any(|(ek, ev)| ek == k && ev == v) {
                return Err(format!("request echo {echoed:?} lacks {k}={v}"));
            }
        }
    }
    let payload = children[2];
    match probe.expect {
        Ok(verb) if payload.name == verb => Ok(()),
        Err(code) if payload.name == "error" && payload.attr("code") == Some(code) => Ok(()),
        _ => Err(format!(
            "payload <{} code={:?}>",
            payload.name,
            payload.attr("code")
        )),
    }
}

pub fn envelopes() -> Outcome {
    let mut store = Store::empty("env");
    for i in 0..5 {
        store.ingest(
            &format!("urn:env:{i}"),
            None,
            &[("main", "text/plain", b"x")],
            &["physics"],
            at(i),
        );
    }
    let servers = [
        TestServer::start(Arc::clone(&store.archive), |c| {
            with_sets(c);
            c.page_size = 2;
        }),
        TestServer::start(Arc::clone(&store.archive), |_| {}),
        TestServer::start(Arc::clone(&store.archive), |c| c.formats.clear()),
    ];
    let token = first_token(
        servers[0].transport().as_ref(),
        &servers[0].oai_url(),
        &[
            ("verb", "ListIdentifiers"),
            ("metadataPrefix", NATIVE_PREFIX),
        ],
    )?
    .ok_or("no resumption token")?;
    let far = stamp(at(1_000_000));
    let p = NATIVE_PREFIX;
    let probes = vec![
        probe(0, &[("verb", "Identify")], Ok("Identify")),
        probe(
            0,
            &[("verb", "ListMetadataFormats")],
            Ok("ListMetadataFormats"),
        ),
        probe(
            0,
            &[("verb", "ListMetadataFormats"), ("identifier", "urn:env:1")],
            Ok("ListMetadataFormats"),
        ),
        probe(0, &[("verb", "ListSets")], Ok("ListSets")),
        probe(
            0,
            &[
                ("verb", "GetRecord"),
                ("identifier", "urn:env:1"),
                ("metadataPrefix", p),
            ],
            Ok("GetRecord"),
        ),
        probe(
            0,
            &[
                ("verb", "ListRecords"),
                ("metadataPrefix", p),
                ("set", "physics"),
            ],
            Ok("ListRecords"),
        ),
        probe(
            0,
            &[("verb", "ListIdentifiers"), ("metadataPrefix", p)],
            Ok("ListIdentifiers"),
        ),
        probe(
            0,
            &[("verb", "ListIdentifiers"), ("resumptionToken", &token)],
            Ok("ListIdentifiers"),
        ),
        probe(
            1,
            &[
                ("verb", "ListRecords"),
                ("metadataPrefix", p),
                ("until", &far),
            ],
            Ok("ListRecords"),
        ),
        probe(0, &[("verb", "Harvest")], Err("badVerb")),
        probe(0, &[("identifier", "urn:env:1")], Err("badVerb")),
        probe(
            0,
            &[("verb", "Identify"), ("verb", "Identify")],
            Err("badVerb"),
        ),
        probe(
            0,
            &[("verb", "GetRecord"), ("identifier", "urn:env:1")],
            Err("badArgument"),
        ),
        probe(
            0,
            &[
                ("verb", "ListRecords"),
                ("metadataPrefix", p),
                ("from", "yesterday"),
            ],
            Err("badArgument"),
        ),
        probe(
            0,
            &[("verb", "Identify"), ("colour", "blue")],
            Err("badArgument"),
        ),
        probe(
            0,
            &[
                ("verb", "ListRecords"),
                ("resumptionToken", "bm90IGEgdG9rZW4"),
            ],
            Err("badResumptionToken"),
        ),
        probe(
            0,
            &[("verb", "ListSets"), ("resumptionToken", "x")],
            Err("badResumptionToken"),
        ),
        probe(
            0,
            &[
                ("verb", "GetRecord"),
                ("identifier", "urn:env:1"),
                ("metadataPrefix", "marc"),
            ],
            Err("cannotDisseminateFormat"),
        ),
        probe(
            0,
            &[("verb", "ListRecords"), ("metadataPrefix", "oai_dc")],
            Err("cannotDisseminateFormat"),
        ),
        probe(
            0,
            &[
                ("verb", "GetRecord"),
                ("identifier", "urn:env:99"),
                ("metadataPrefix", p),
            ],
            Err("idDoesNotExist"),
        ),
        probe(
            0,
            &[("verb", "ListMetadataFormats"), ("identifier", "not a uri")],
            Err("idDoesNotExist"),
        ),
        probe(
            0,
            &[
                ("verb", "ListRecords"),
                ("metadataPrefix", p),
                ("from", &far),
            ],
            Err("noRecordsMatch"),
        ),
        probe(
            0,
            &[
                ("verb", "ListIdentifiers"),
                ("metadataPrefix", p),
                ("set", "maths"),
            ],
            Err("noRecordsMatch"),
        ),
        probe(
            2,
            &[("verb", "ListMetadataFormats")],
            Err("noMetadataFormats"),
        ),
        probe(1, &[("verb", "ListSets")], Err("noSetHierarchy")),
        probe(
            1,
            &[
                ("verb", "ListIdentifiers"),
                ("metadataPrefix", p),
                ("set", "physics"),
            ],
            Err("noSetHierarchy"),
        ),
    ];
    let verbs: HashSet<&str> = probes.iter().filter_map(|p| p.expect.ok()).collect();
    let codes: HashSet<&str> = probes.iter().filter_map(|p| p.expect.err()).collect();
    if verbs.len() != 6 || codes.len() != 8 {
        return Err(format!(
            "matrix covers {} verbs and {} codes",
            verbs.len(),
            codes.len()
        ));
    }
    for probe in &probes {
        let server = &servers[probe.server];
        let query = encode_pairs(probe.args.iter().map(|(k, v)| (*k, v.as_str())));
        let response = server
            .transport()
            .get(&format!("{}?{query}", server.oai_url()))
            .ctx(&query)?;
        let content_type = response.content_type.clone().unwrap_or_default();
        if response.status != 200 || !content_type.starts_with("text/xml") {
            return Err(format!("{query}: HTTP {} {content_type}", response.status));
        }
        check_envelope(&response.body, &server.oai_url(), probe)
            .map_err(|e| format!("{query}: {e}"))?;
    }
    Ok(format!("{} fixtures, 6 verbs, 8 error codes", probes.len()))
}
