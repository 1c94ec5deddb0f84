"""Tests for the line-delimited JSON protocol: dispatcher, servers, client."""

import json
import math
import socket
import socketserver
import threading

import pytest

from sensecheck.backends.count import (
    CountBigramGenerator,
    CountMaskedLM,
    CountPairClassifier,
)
from sensecheck.backends.service import (
    BackendServer,
    BackendSet,
    ServiceBackend,
    handle_request,
    serve_http,
    serve_tcp,
)
from sensecheck.choice import concat_pair
from sensecheck.data import StatementPair
from sensecheck.exceptions import ServiceProtocolError
from sensecheck.generation import decode_continuation
from sensecheck.plausibility import pseudo_log_likelihood
from sensecheck.text import TokenSequence

from conftest import HashScorer


@pytest.fixture(scope="module")
def anchor_backends():
    corpus = ["a b", "a c"]
    return BackendSet(
        masked=CountMaskedLM().fit(corpus),
        classifier=CountPairClassifier().fit(corpus),
        scorer=HashScorer(),
        generator=CountBigramGenerator().fit(["x is bad ."]),
    )


def masked_payload(backends) -> dict:
    lm = backends.masked
    seq = TokenSequence(
        (lm.begin_marker, lm.mask_token, "b", lm.end_marker), has_specials=True
    )
    return {"op": "masked", "tokens": list(seq.tokens), "position": 1}


def pair_sequence(backend, s0: str, s1: str) -> TokenSequence:
    return concat_pair(StatementPair(id="wire-1", sent0=s0, sent1=s1), backend)


class TestHandleRequest:
    def test_masked_returns_the_full_distribution(self, anchor_backends):
        payload = masked_payload(anchor_backends)
        response = handle_request(anchor_backends, payload)
        seq = TokenSequence(payload["tokens"], has_specials=True)
        direct = anchor_backends.masked.predict_masked(seq, 1)
        assert response == {"probs": dict(direct.probabilities)}

    def test_classify_returns_a_probability_pair(self, anchor_backends):
        classifier = anchor_backends.classifier
        seq = pair_sequence(classifier, "a b", "a zorgle")
        response = handle_request(
            anchor_backends, {"op": "classify", "tokens": list(seq.tokens)}
        )
        assert set(response) == {"probs"}
        assert response["probs"] == list(classifier.classify_pair(seq))
        assert sum(response["probs"]) == pytest.approx(1.0)

    def test_score_echoes_the_scorer(self, anchor_backends):
        seq = TokenSequence(("[CLS]", "a", "b", "[SEP]"), has_specials=True)
        response = handle_request(
            anchor_backends, {"op": "score", "tokens": list(seq.tokens)}
        )
        assert response == {"score": anchor_backends.scorer.score_choice(seq)}

    def test_next_returns_the_generator_distribution(self, anchor_backends):
        response = handle_request(anchor_backends, {"op": "next", "prefix": ["x"]})
        direct = anchor_backends.generator.next_token_distribution(["x"])
        assert response == {"probs": dict(direct.probabilities)}

    def test_top_k_truncates_by_descending_probability(self, anchor_backends):
        payload = masked_payload(anchor_backends)
        response = handle_request(anchor_backends, payload, top_k=2)
        assert set(response) == {"top", "other_logp"}
        seq = TokenSequence(payload["tokens"], has_specials=True)
        direct = anchor_backends.masked.predict_masked(seq, 1)
        ranked = sorted(direct.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [t for t, _ in response["top"]] == [t for t, _ in ranked[:2]]
        for (token, logp), (_, p) in zip(response["top"], ranked[:2]):
            assert logp == math.log(p)
        residual = math.fsum(p for _, p in ranked[2:])
        assert response["other_logp"] == math.log(residual)

    def test_top_k_beyond_support_logs_the_floor_residual(self, anchor_backends):
        response = handle_request(anchor_backends, {"op": "next", "prefix": ["x"]}, top_k=50)
        direct = anchor_backends.generator.next_token_distribution(["x"])
        assert len(response["top"]) == len(direct.probabilities)
        assert response["other_logp"] == math.log(1e-300)

    def test_top_k_ties_break_lexicographically(self, anchor_backends):
        response = handle_request(anchor_backends, {"op": "next", "prefix": ["q"]}, top_k=2)
        direct = anchor_backends.generator.next_token_distribution(["q"])
        expected = sorted(direct.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
        assert [t for t, _ in response["top"]] == [t for t, _ in expected]

    def test_unknown_op_is_an_error_payload(self, anchor_backends):
        response = handle_request(anchor_backends, {"op": "translate"})
        assert response == {"error": "unknown op 'translate'"}

    def test_missing_backend_is_an_error_payload(self):
        empty = BackendSet()
        response = handle_request(empty, {"op": "next", "prefix": ["x"]})
        assert "no backend for op 'next'" in response["error"]

    @pytest.mark.parametrize(
        "payload",
        [
            {"op": "masked", "tokens": ["[CLS]", "a", "[SEP]"]},
            {"op": "masked", "tokens": ["[CLS]", "a", "[SEP]"], "position": 99},
            {"op": "masked", "tokens": ["a", "b"], "position": 0},
            {"op": "classify", "tokens": ["[CLS]", "a", "[SEP]"]},
            {"op": "next"},
            {},
        ],
    )
    def test_bad_requests_answer_instead_of_raising(self, anchor_backends, payload):
        response = handle_request(anchor_backends, payload)
        assert set(response) == {"error"}
        assert response["error"]


class TestServiceBackendConstruction:
    @pytest.mark.parametrize("url", ["ftp://host:1", "file:///x", "host:80", ""])
    def test_unsupported_schemes_rejected(self, url):
        with pytest.raises(ValueError, match="http"):
            ServiceBackend(url)

    @pytest.mark.parametrize("url", ["tcp://hostonly", "tcp://:900"])
    def test_tcp_urls_need_host_and_port(self, url):
        with pytest.raises(ValueError, match="host and port"):
            ServiceBackend(url)

    def test_vocabulary_is_the_configured_marker_set(self):
        client = ServiceBackend("http://127.0.0.1:1")
        assert client.vocabulary == frozenset(
            {"[CLS]", "[SEP]", "[MASK]", "[UNK]", "[EOS]"}
        )

    def test_marker_names_are_configurable(self):
        client = ServiceBackend("tcp://127.0.0.1:9", unknown_token="<unk>")
        assert client.unknown_token == "<unk>"
        assert "<unk>" in client.vocabulary


SERVERS = {"http": serve_http, "tcp": serve_tcp}


@pytest.fixture(scope="module", params=sorted(SERVERS))
def live_service(request, anchor_backends):
    with SERVERS[request.param](anchor_backends) as server:
        yield ServiceBackend(server.url), anchor_backends


class TestOverTheWire:
    def test_url_carries_an_ephemeral_port(self, live_service):
        client, _ = live_service
        port = int(client.url.rsplit(":", 1)[1])
        assert port > 0

    def test_masked_distribution_round_trips_bit_exactly(self, live_service):
        client, backends = live_service
        seq = TokenSequence(("[CLS]", "a", "[MASK]", "[SEP]"), has_specials=True)
        remote = client.predict_masked(seq, 2)
        local = backends.masked.predict_masked(seq, 2)
        assert remote.probabilities == local.probabilities

    def test_classify_pair_round_trips(self, live_service):
        client, backends = live_service
        seq = pair_sequence(backends.classifier, "a b", "zorgle blick")
        assert client.classify_pair(seq) == backends.classifier.classify_pair(seq)

    def test_score_choice_round_trips(self, live_service):
        client, backends = live_service
        seq = TokenSequence(("[CLS]", "b", "a", "[SEP]"), has_specials=True)
        assert client.score_choice(seq) == backends.scorer.score_choice(seq)

    def test_next_token_distribution_round_trips(self, live_service):
        client, backends = live_service
        remote = client.next_token_distribution(["x"])
        local = backends.generator.next_token_distribution(["x"])
        assert remote.probabilities == local.probabilities

    def test_content_only_log_likelihood_agrees_across_the_wire(self, live_service):
        # Content tokens sit inside the explicit support, which the full
        # response form carries verbatim, so the sums match bit for bit.
        client, backends = live_service
        seq = TokenSequence(("[CLS]", "a", "b", "[SEP]"), has_specials=True)
        remote = pseudo_log_likelihood(seq, client, content_only=True)
        local = pseudo_log_likelihood(seq, backends.masked, content_only=True)
        assert remote.log_prob_sum == local.log_prob_sum
        assert not remote.clamped

    def test_full_responses_cannot_carry_the_out_of_support_floor(self, live_service):
        # The untruncated wire form is exactly the explicit support (which
        # sums to one), so a count backend's out-of-support floor is lost in
        # transit: marker positions read as zero and clamp at the floor.
        client, backends = live_service
        seq = TokenSequence(("[CLS]", "a", "b", "[SEP]"), has_specials=True)
        remote = pseudo_log_likelihood(seq, client)
        local = pseudo_log_likelihood(seq, backends.masked)
        assert remote.clamped
        assert not local.clamped
        assert remote.log_prob_sum < local.log_prob_sum

    def test_greedy_decoding_works_through_the_protocol(self, live_service):
        client, _ = live_service
        assert decode_continuation(["x"], client) == "is bad ."

    def test_client_side_validation_happens_before_any_call(self):
        # No server is listening on this url; local validation must fire first.
        client = ServiceBackend("tcp://127.0.0.1:9")
        with pytest.raises(ValueError, match="position"):
            client.predict_masked(
                TokenSequence(("[CLS]", "a", "[SEP]"), has_specials=True), 9
            )
        with pytest.raises(ValueError, match="marker-wrapped"):
            client.score_choice(TokenSequence(("a",), has_specials=False))

    def test_server_error_payloads_become_protocol_errors(self, live_service):
        client, _ = live_service
        with pytest.raises(ServiceProtocolError, match="unknown op"):
            client._call({"op": "translate"})

    def test_missing_backend_reported_through_the_wire(self):
        with serve_tcp(BackendSet()) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match="no backend"):
                client.next_token_distribution(["x"])


class TestTopKOverTheWire:
    def test_truncated_response_renormalizes_onto_the_unknown_token(self, anchor_backends):
        with serve_http(anchor_backends, top_k=2) as server:
            client = ServiceBackend(server.url)
            remote = client.next_token_distribution(["x"])
        local = anchor_backends.generator.next_token_distribution(["x"])
        ranked = sorted(local.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = dict(ranked[:2])
        assert set(remote.probabilities) == set(kept) | {client.unknown_token}
        assert math.fsum(remote.probabilities.values()) == pytest.approx(1.0, abs=1e-12)
        # Kept tokens keep their relative sizes; the catch-all absorbs every
        # unkept token's mass (including the unkept share of itself).
        (t_hi, p_hi), (t_lo, p_lo) = ranked[:2]
        assert remote.prob(t_hi) / remote.prob(t_lo) == pytest.approx(p_hi / p_lo)
        residual = math.fsum(p for _, p in ranked[2:])
        assert remote.prob(client.unknown_token) == pytest.approx(
            residual + kept.get(client.unknown_token, 0.0), abs=1e-12
        )

    def test_unlisted_tokens_get_the_residual_share(self, anchor_backends):
        with serve_tcp(anchor_backends, top_k=1) as server:
            client = ServiceBackend(server.url)
            remote = client.next_token_distribution(["x"])
        assert remote.prob("never-listed") == remote.prob(client.unknown_token)

    def test_flat_distributions_can_crown_the_catch_all(self, anchor_backends):
        # Under heavy smoothing the unkept mass outweighs any single kept
        # token, so the catch-all becomes the truncated argmax. This is a
        # property of truncation itself, worth pinning.
        with serve_tcp(anchor_backends, top_k=1) as server:
            client = ServiceBackend(server.url)
            remote = client.next_token_distribution(["x"])
        assert remote.argmax() == client.unknown_token

    def test_greedy_decoding_survives_truncation_of_peaked_models(self):
        # Five repetitions peak every step's winner at 6/11 > 5/11 residual,
        # so the greedy path is identical with and without truncation.
        generator = CountBigramGenerator().fit(["x is bad ."] * 5)
        backends = BackendSet(generator=generator)
        with serve_tcp(backends, top_k=1) as server:
            client = ServiceBackend(server.url)
            assert decode_continuation(["x"], client) == "is bad ."
        assert decode_continuation(["x"], generator) == "is bad ."


class _FixedReplyHandler(socketserver.StreamRequestHandler):
    def handle(self):
        self.rfile.readline()
        reply = self.server.reply
        if reply is not None:
            self.wfile.write(reply.encode("utf-8") + b"\n")


def fixed_reply_server(reply: str | None) -> BackendServer:
    class _Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    server = _Server(("127.0.0.1", 0), _FixedReplyHandler)
    server.reply = reply
    return BackendServer(server, f"tcp://127.0.0.1:{server.server_address[1]}")


class TestMalformedResponses:
    @pytest.mark.parametrize(
        "reply, excerpt",
        [
            ("this is not json", "invalid JSON"),
            ("[1, 2, 3]", "not an object"),
            ('{"neither": 1}', 'neither "probs" nor "top"'),
            ('{"probs": "dense"}', '"probs" must map'),
            ('{"probs": {"a": "high"}}', "invalid distribution"),
            ('{"top": [], "other_logp": 0.0}', "non-empty list"),
            ('{"top": [["a", "big"]], "other_logp": 0.0}', "invalid top-k"),
            ('{"top": [["a", 0.0]]}', "invalid top-k"),
        ],
    )
    def test_bad_distribution_replies_raise(self, reply, excerpt):
        with fixed_reply_server(reply) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match=excerpt):
                client.next_token_distribution(["x"])

    @pytest.mark.parametrize(
        "reply",
        [
            '{"probs": [0.9, 0.2]}',
            '{"probs": [1.0]}',
            '{"probs": [0.5, "half"]}',
            '{"probs": [-0.5, 1.5]}',
            '{"score": 1.0}',
        ],
    )
    def test_bad_classification_replies_raise(self, reply, anchor_backends):
        seq = pair_sequence(anchor_backends.classifier, "a b", "a c")
        with fixed_reply_server(reply) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match="two probabilities"):
                client.classify_pair(seq)

    @pytest.mark.parametrize("reply", ['{"score": "high"}', '{"score": NaN}', '{"probs": {}}'])
    def test_bad_score_replies_raise(self, reply):
        seq = TokenSequence(("[CLS]", "a", "[SEP]"), has_specials=True)
        with fixed_reply_server(reply) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match='"score" must be a finite number'):
                client.score_choice(seq)

    def test_closed_connection_raises(self):
        with fixed_reply_server(None) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match="closed the connection"):
                client.next_token_distribution(["x"])

    def test_tiny_but_positive_mass_renormalizes(self):
        reply = '{"top": [["a", -600.0]], "other_logp": -600.0}'
        with fixed_reply_server(reply) as server:
            client = ServiceBackend(server.url)
            dist = client.next_token_distribution(["x"])
        assert dist.prob("a") == pytest.approx(0.5)
        assert dist.prob(client.unknown_token) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "reply",
        [
            '{"top": [["a", -Infinity]], "other_logp": -Infinity}',
            '{"top": [["a", -1e9]], "other_logp": -1e9}',
        ],
    )
    def test_zero_total_mass_raises(self, reply):
        # Both an explicit -inf and logs so deep they underflow exp to zero.
        with fixed_reply_server(reply) as server:
            client = ServiceBackend(server.url)
            with pytest.raises(ServiceProtocolError, match="non-positive total mass"):
                client.next_token_distribution(["x"])


def free_port() -> int:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


class TestTransportFailures:
    def test_unreachable_tcp_service_raises(self):
        client = ServiceBackend(f"tcp://127.0.0.1:{free_port()}", timeout=0.5)
        with pytest.raises(ServiceProtocolError, match="failed"):
            client.next_token_distribution(["x"])

    def test_unreachable_http_service_raises(self):
        client = ServiceBackend(f"http://127.0.0.1:{free_port()}", timeout=0.5)
        with pytest.raises(ServiceProtocolError, match="failed"):
            client.next_token_distribution(["x"])

    def test_server_close_is_idempotent_through_context_exit(self, anchor_backends):
        server = serve_tcp(anchor_backends)
        client = ServiceBackend(server.url, timeout=0.5)
        assert client.next_token_distribution(["x"]).probabilities
        server.close()
        with pytest.raises(ServiceProtocolError):
            client.next_token_distribution(["x"])

    def test_http_server_answers_concurrent_clients(self, anchor_backends):
        with serve_http(anchor_backends) as server:
            client = ServiceBackend(server.url)
            results = []
            errors = []

            def call():
                try:
                    results.append(client.next_token_distribution(["x"]).argmax())
                except Exception as exc:  # pragma: no cover - diagnostic path
                    errors.append(exc)

            threads = [threading.Thread(target=call) for _ in range(8)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        assert not errors
        assert results == ["is"] * 8

    def test_http_rejects_invalid_request_json(self, anchor_backends):
        import urllib.request

        with serve_http(anchor_backends) as server:
            request = urllib.request.Request(
                server.url, data=b"{not json", method="POST"
            )
            with urllib.request.urlopen(request, timeout=5) as reply:
                body = json.loads(reply.read().decode("utf-8"))
        assert body == {"error": "request is not valid JSON"}

    def test_tcp_handler_skips_blank_lines(self, anchor_backends):
        with serve_tcp(anchor_backends) as server:
            port = int(server.url.rsplit(":", 1)[1])
            with socket.create_connection(("127.0.0.1", port), timeout=5) as conn:
                conn.sendall(b"\n\n" + json.dumps({"op": "next", "prefix": ["x"]}).encode() + b"\n")
                reader = conn.makefile("r", encoding="utf-8")
                body = json.loads(reader.readline())
        assert "probs" in body
