use chrono::{DateTime, Utc};

use super::{
    OAI_NAMESPACE, OaiError, OaiErrorCode, OaiHeader, OaiRecord, OaiReply, OaiRequest, Resumption,
};
use crate::time::{GRANULARITY, format_datestamp};
use crate::xml::XmlWriter;

const SCHEMA_LOCATION: &str =
    "http://www.openarchives.org/OAI/2.0/ http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd";

fn envelope(base_url: &str, request: Option<&OaiRequest>, now: DateTime<Utc>) -> XmlWriter {
    let mut w = XmlWriter::with_declaration();
    w.open(
        "OAI-PMH",
        &[
            ("xmlns", OAI_NAMESPACE),
            ("xmlns:xsi", "http://www.w3.org/2001/XMLSchema-instance"),
            ("xsi:schemaLocation", SCHEMA_LOCATION),
        ],
    );
    w.leaf("responseDate", &[], &format_datestamp(now));
    let args = request.map(OaiRequest::to_args).unwrap_or_default();
    let attrs: Vec<(&str, &str)> = args.iter().map(|(k, v)| (*k, v.as_str())).collect();
    w.leaf("request", &attrs, base_url);
    w
}

pub(super) fn error(
    base_url: &str,
    request: Option<&OaiRequest>,
    err: &OaiError,
    now: DateTime<Utc>,
) -> String {
    // Arguments are not echoed when the request itself was illegal.
    let request =
        request.filter(|_| !matches!(err.code, OaiErrorCode::BadVerb | OaiErrorCode::BadArgument));
    let mut w = envelope(base_url, request, now);
    w.leaf("error", &[("code", err.code.as_str())], &err.message);
    w.close("OAI-PMH");
    w.finish()
}

fn header(w: &mut XmlWriter, h: &OaiHeader) {
    w.open("header", &[]);
    w.leaf("identifier", &[], h.identifier.as_str());
    w.leaf("datestamp", &[], &format_datestamp(h.datestamp));
    for set in &h.set_specs {
        w.leaf("setSpec", &[], set.as_str());
    }
    w.close("header");
}

fn record_xml(w: &mut XmlWriter, record: &OaiRecord) {
    w.open("record", &[]);
    header(w, &record.header);
    w.open("metadata", &[]);
    w.raw(std::str::from_utf8(&record.metadata.xml).expect("DIPs are UTF-8"));
    w.close("metadata");
    w.close("record");
}

fn resumption(w: &mut XmlWriter, r: &Option<Resumption>) {
    let Some(r) = r else { return };
    let size = r.complete_list_size.to_string();
    let cursor = r.cursor.to_string();
    let expiration = r.expiration.map(format_datestamp);
    let mut attrs = Vec::new();
    if let Some(exp) = &expiration {
        attrs.push(("expirationDate", exp.as_str()));
    }
    attrs.push(("completeListSize", &size));
    attrs.push(("cursor", &cursor));
    match &r.token {
        Some(token) => w.leaf("resumptionToken", &attrs, token),
        None => w.empty("resumptionToken", &attrs),
    };
}

pub(super) fn reply(
    base_url: &str,
    request: &OaiRequest,
    reply: &OaiReply,
    now: DateTime<Utc>,
) -> String {
    let mut w = envelope(base_url, Some(request), now);
    let verb = request.verb.as_str();
    w.open(verb, &[]);
    match reply {
        OaiReply::Identify(id) => {
            w.leaf("repositoryName", &[], &id.repository_name);
            w.leaf("baseURL", &[], &id.base_url);
            w.leaf("protocolVersion", &[], "2.0");
            w.leaf("adminEmail", &[], &id.admin_email);
            w.leaf(
                "earliestDatestamp",
                &[],
                &format_datestamp(id.earliest_datestamp),
            );
            w.leaf("deletedRecord", &[], "no");
            w.leaf("granularity", &[], GRANULARITY);
        }
        OaiReply::ListMetadataFormats(formats) => {
            for f in formats {
                w.open("metadataFormat", &[]);
                w.leaf("metadataPrefix", &[], &f.metadata_prefix);
                w.leaf("schema", &[], &f.schema_url);
                w.leaf("metadataNamespace", &[], &f.namespace_uri);
                w.close("metadataFormat");
            }
        }
        OaiReply::ListSets(sets) => {
            for (spec, name) in sets {
                w.open("set", &[]);
                w.leaf("setSpec", &[], spec.as_str());
                w.leaf("setName", &[], name);
                w.close("set");
            }
        }
        OaiReply::GetRecord(record) => {
            record_xml(&mut w, record);
        }
        OaiReply::ListRecords(page) => {
            for record in &page.items {
                record_xml(&mut w, record);
            }
            resumption(&mut w, &page.resumption);
        }
        OaiReply::ListIdentifiers(page) => {
            for h in &page.items {
                header(&mut w, h);
            }
            resumption(&mut w, &page.resumption);
        }
    }
    w.close(verb);
    w.close("OAI-PMH");
    w.finish()
}
