"""Append-only record log persisting one document's revision history.

Three record kinds mirror the storage layout of the in-memory model:
triple records for the head graph, revision records for the metadata,
and delta records for the parent edges.  Records are length-prefixed
binary frames; reloading rebuilds the graph of revisions, re-verifies
every revision hash and cross-checks the head materialization against
the stored triples.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

from .revisions import (
    HASH_LEN,
    GraphOfRevisions,
    ParentLink,
    Revision,
)
from .triples import Delta, Term, Triple, delta_parse, delta_serialize, IRI, LITERAL

REC_HEADER = 0
REC_TRIPLE = 1
REC_REVISION = 2
REC_DELTA = 3

_KIND_BYTE = {IRI: 0, LITERAL: 1}
_BYTE_KIND = {0: IRI, 1: LITERAL}


class CorruptLog(ValueError):
    pass


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptLog("truncated record")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def take_bytes(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)


def _encode_term(t: Term) -> bytes:
    return (
        bytes([_KIND_BYTE[t.kind]])
        + _pack_bytes(t.value.encode("utf-8"))
        + _pack_bytes((t.datatype or "").encode("utf-8"))
    )


def _decode_term(r: _Reader) -> Term:
    kind = _BYTE_KIND[r.take(1)[0]]
    value = r.take_bytes().decode("utf-8")
    datatype = r.take_bytes().decode("utf-8") or None
    return Term(kind, value, datatype)


def _write_record(fh: BinaryIO, kind: int, body: bytes) -> None:
    fh.write(struct.pack(">BI", kind, len(body)) + body)


def save_document(gor: GraphOfRevisions, path, head: bytes | None = None) -> None:
    """Write the full log: header, revisions in parent-first order, one
    delta record per edge, then the head graph's triples."""
    heads = sorted(gor.heads())
    if head is None:
        head = heads[0] if heads else gor.root.hash
    order = _topo_order(gor)
    with open(path, "wb") as fh:
        _write_record(fh, REC_HEADER, _pack_bytes(gor.uri.encode("utf-8")) + head)
        for rev in order:
            if rev.is_root:
                continue
            body = (
                rev.hash
                + rev.author
                + struct.pack(">qB?", rev.timestamp, len(rev.parents), rev.local)
                + _pack_bytes(rev.signature)
            )
            _write_record(fh, REC_REVISION, body)
            for link in rev.parents:
                delta_text = delta_serialize(link.delta).encode("utf-8")
                _write_record(
                    fh, REC_DELTA, link.parent + rev.hash + _pack_bytes(delta_text)
                )
        for t in sorted(gor.materialize(head), key=Triple.sort_key):
            _write_record(
                fh,
                REC_TRIPLE,
                _encode_term(t.subject) + _encode_term(t.predicate) + _encode_term(t.object),
            )


def _topo_order(gor: GraphOfRevisions) -> list[Revision]:
    order, placed = [], set()
    pending = sorted(gor.revisions(), key=lambda r: (r.timestamp, r.hash))
    while pending:
        progressed = False
        rest = []
        for rev in pending:
            if all(l.parent in placed or l.parent not in gor for l in rev.parents):
                order.append(rev)
                placed.add(rev.hash)
                progressed = True
            else:
                rest.append(rev)
        if not progressed:
            raise CorruptLog("cycle in revision graph")
        pending = rest
    return order


def load_document(path) -> tuple[GraphOfRevisions, bytes]:
    """Reload a log written by save_document; returns (gor, head hash).
    Raises CorruptLog on framing damage, hash mismatch, or a head graph
    that does not match the stored triples."""
    with open(path, "rb") as fh:
        data = fh.read()

    uri, head = "", b""
    revisions: dict[bytes, dict] = {}
    triples: set[Triple] = set()

    pos = 0
    while pos < len(data):
        if pos + 5 > len(data):
            raise CorruptLog("truncated frame")
        kind, length = struct.unpack(">BI", data[pos : pos + 5])
        pos += 5
        if pos + length > len(data):
            raise CorruptLog("truncated frame body")
        r = _Reader(data[pos : pos + length])
        pos += length
        if kind == REC_HEADER:
            uri = r.take_bytes().decode("utf-8")
            head = r.take(HASH_LEN)
        elif kind == REC_REVISION:
            h = r.take(HASH_LEN)
            author = r.take(16)
            timestamp, n_parents, local = struct.unpack(">qB?", r.take(10))
            signature = r.take_bytes()
            revisions[h] = {
                "author": author,
                "timestamp": timestamp,
                "n_parents": n_parents,
                "local": local,
                "signature": signature,
                "links": [],
            }
        elif kind == REC_DELTA:
            parent = r.take(HASH_LEN)
            child = r.take(HASH_LEN)
            delta = delta_parse(r.take_bytes().decode("utf-8"))
            if child not in revisions:
                raise CorruptLog("delta record before its revision record")
            revisions[child]["links"].append(ParentLink(parent, delta))
        elif kind == REC_TRIPLE:
            triples.add(Triple(_decode_term(r), _decode_term(r), _decode_term(r)))
        else:
            raise CorruptLog(f"unknown record kind {kind}")

    gor = GraphOfRevisions(uri)
    for h, fields in revisions.items():
        if len(fields["links"]) != fields["n_parents"]:
            raise CorruptLog("parent count mismatch")
        rev = Revision(
            h,
            fields["author"],
            fields["timestamp"],
            tuple(fields["links"]),
            fields["signature"],
            fields["local"],
        )
        try:
            gor.insert(rev)
        except Exception as exc:
            raise CorruptLog(f"revision rejected: {exc}") from exc
    if gor.missing_parents():
        raise CorruptLog("log references unknown parents")
    if head not in gor:
        raise CorruptLog("head revision missing")
    if gor.materialize(head) != frozenset(triples):
        raise CorruptLog("head graph does not match stored triples")
    return gor, head
