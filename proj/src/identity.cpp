#include "didlink/identity.hpp"

#include <algorithm>
#include <future>

#include <poll.h>

#include "didlink/error.hpp"

namespace didlink::identity {

using frame::Frame;
using frame::FrameType;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::string_view kDescriptorId = "sd-jwt-claims";

std::string fresh_token() { return codec::base64url_encode(crypto::random_bytes(16)); }

[[noreturn]] void violation(const std::string &what) { throw Error(ErrorCode::ProtocolViolation, what); }

Bytes to_payload(const Json &j) {
    auto text = canonical(j);
    return Bytes(text.begin(), text.end());
}

Json from_payload(const Frame &f) {
    try {
        return parse_canonical(didlink::to_string(f.payload));
    } catch (const Error &) {
        violation("frame payload is not canonical JSON");
    }
}

} // namespace

PresentationRequest PresentationRequest::make(std::vector<std::string> required_claims,
                                              std::vector<Did> accepted_issuers) {
    return {fresh_token(), std::move(required_claims), std::move(accepted_issuers), fresh_token(), std::nullopt};
}

Json PresentationRequest::to_json() const {
    Json fields = Json::array();
    for (auto &c : required_claims) fields.push_back({{"path", Json::array({"$." + c})}});
    Json issuers = Json::array();
    for (auto &d : accepted_issuers) issuers.push_back(d.full());
    Json options{{"challenge", nonce}};
    if (domain) options["domain"] = *domain;
    return {{"presentation_definition",
             {{"id", request_id},
              {"input_descriptors",
               Json::array({{{"id", kDescriptorId}, {"constraints", {{"fields", fields}}}, {"issuer", issuers}}})}}},
            {"options", options}};
}

PresentationRequest PresentationRequest::from_json(const Json &j) {
    try {
        const auto &def = j.at("presentation_definition");
        const auto &descriptors = def.at("input_descriptors");
        if (descriptors.size() != 1) violation("exactly one input descriptor expected");
        PresentationRequest r{def.at("id").get<std::string>(), {}, {}, j.at("options").at("challenge").get<std::string>(),
                              std::nullopt};
        for (auto &f : descriptors[0].at("constraints").at("fields")) {
            auto path = f.at("path").at(0).get<std::string>();
            if (path.rfind("$.", 0) != 0 || path.size() < 3) violation("unsupported field path " + path);
            r.required_claims.push_back(path.substr(2));
        }
        for (auto &d : descriptors[0].at("issuer")) r.accepted_issuers.push_back(Did::parse(d.get<std::string>()));
        if (j["options"].contains("domain")) r.domain = j["options"]["domain"].get<std::string>();
        return r;
    } catch (const Json::exception &e) {
        violation(std::string("presentation request: ") + e.what());
    } catch (const Error &e) {
        if (e.code() == ErrorCode::ProtocolViolation) throw;
        violation(std::string("presentation request: ") + e.what());
    }
}

std::string_view to_string(Mode mode) noexcept {
    switch (mode) {
    case Mode::client_first: return "client_first";
    case Mode::server_first: return "server_first";
    case Mode::parallel: return "parallel";
    }
    return "parallel";
}

Mode mode_from_string(std::string_view text) {
    for (auto m : {Mode::client_first, Mode::server_first, Mode::parallel})
        if (to_string(m) == text) return m;
    throw Error(ErrorCode::UsageError, "unknown identification mode " + std::string(text));
}

namespace {

// Flow 0 has the client verifying the server, flow 1 the reverse.
class Runner {
  public:
    Runner(channel::SecureSession &session, const Config &config) : session_(session), config_(config) {
        bool client = session.is_client();
        verifier_.flow = client ? 0 : 1;
        prover_.flow = client ? 1 : 0;
        // The flow whose prover is the client runs first in client_first mode.
        bool mine_first = config.mode == Mode::parallel ||
                          (config.mode == Mode::client_first) == (verifier_.flow == 1);
        verifier_.deferred = !mine_first;
    }

    Outcome run() {
        auto deadline = Clock::now() + config_.timeout;
        if (!verifier_.deferred) start_verifier();
        while (!(verifier_.done && prover_.done)) {
            if (Clock::now() >= deadline) throw Error(ErrorCode::Timeout, "identification");
            if (verifier_.deferred && prover_.done) start_verifier();
            poll_verification();
            if (auto f = session_.try_read_frame()) {
                dispatch(*f);
                continue;
            }
            if (session_.has_pending()) continue;
            wait_readable(verifier_.pending.valid() ? std::chrono::milliseconds(2)
                                                    : std::chrono::duration_cast<std::chrono::milliseconds>(
                                                          deadline - Clock::now()));
        }
        Outcome out;
        out.duration_ms = to_ms(Clock::now() - session_.handshake_finished());
        if (verifier_.error) throw *verifier_.error;
        out.peer = std::move(verifier_.result);
        out.presented_accepted = prover_.accepted;
        out.presented_rejection = prover_.rejection;
        return out;
    }

  private:
    struct VerifierFlow {
        std::uint8_t flow = 0;
        bool deferred = false;
        bool started = false;
        bool done = false;
        enum { awaiting_presentation, verifying, awaiting_complete } state = awaiting_presentation;
        std::optional<PresentationRequest> request;
        std::future<vc::VerifiedClaims> pending;
        Clock::time_point started_at;
        std::optional<IdentificationResult> result;
        std::optional<Error> error;
    };
    struct ProverFlow {
        std::uint8_t flow = 1;
        bool done = false;
        enum { awaiting_request, awaiting_result } state = awaiting_request;
        std::optional<bool> accepted;
        std::optional<std::string> rejection;
    };

    void send(FrameType type, std::uint8_t flow, const Json &payload) {
        session_.write_frame({type, flow, to_payload(payload)});
    }

    void wait_readable(std::chrono::milliseconds timeout) {
        pollfd p{session_.fd(), POLLIN, 0};
        ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(0, timeout.count())));
    }

    void start_verifier() {
        verifier_.deferred = false;
        if (verifier_.started) return;
        verifier_.started = true;
        verifier_.started_at = Clock::now();
        if (!config_.request) {
            send(FrameType::identification_complete, verifier_.flow, Json::object());
            verifier_.done = true;
            return;
        }
        verifier_.request = config_.request;
        if (config_.self_did) verifier_.request->domain = config_.self_did->full();
        send(FrameType::presentation_request, verifier_.flow, verifier_.request->to_json());
    }

    void protocol_error(std::uint8_t flow, const std::string &what) {
        try {
            send(FrameType::error, flow, {{"code", "protocol_violation"}, {"detail", what}});
        } catch (const Error &) {
        }
        violation(what);
    }

    void dispatch(const Frame &f) {
        if (!frame::is_known(f.type)) protocol_error(f.flow, "unknown frame type");
        if (f.flow == verifier_.flow)
            on_verifier_frame(f);
        else if (f.flow == prover_.flow)
            on_prover_frame(f);
        else
            protocol_error(f.flow, "unknown flow");
    }

    // Frames on the flow where this side is the verifier.
    void on_verifier_frame(const Frame &f) {
        auto &v = verifier_;
        if (v.done || !v.started) protocol_error(f.flow, "unexpected frame on finished flow");
        if (f.type == FrameType::error) {
            auto j = from_payload(f);
            auto code = j.value("code", std::string("peer_refused"));
            v.error = code == "peer_refused" ? Error(ErrorCode::PeerRefused, j.value("detail", ""))
                                             : Error(ErrorCode::ProtocolViolation, j.value("detail", code));
            v.done = true;
            return;
        }
        if (f.type == FrameType::presentation && v.state == VerifierFlow::awaiting_presentation) {
            auto j = from_payload(f);
            std::string token;
            try {
                if (j.at("presentation_submission").at("definition_id").get<std::string>() != v.request->request_id)
                    violation("submission for another request");
                token = j.at("vp_token").get<std::string>();
            } catch (const Json::exception &) {
                protocol_error(f.flow, "malformed presentation submission");
            }
            v.state = VerifierFlow::verifying;
            v.pending = std::async(std::launch::async, [this, token] { return verify(token); });
            return;
        }
        if (f.type == FrameType::identification_complete && v.state == VerifierFlow::awaiting_complete) {
            v.done = true;
            return;
        }
        protocol_error(f.flow, "frame out of order on verifier flow");
    }

    vc::VerifiedClaims verify(const std::string &token) {
        const auto &req = *verifier_.request;
        vc::VerifyPolicy policy;
        if (session_.peer().peer_did &&
            (session_.peer().mode == channel::PeerMode::did || session_.peer().mode == channel::PeerMode::did_pending_vc))
            policy.expected_subject = session_.peer().peer_did;
        policy.accepted_issuers = req.accepted_issuers;
        policy.nonce = req.nonce;
        policy.audience = req.domain;
        policy.now = config_.clock();
        policy.cache_policy = config_.cache_policy;
        if (!config_.resolver) throw Error(ErrorCode::ResolutionFailed, "no resolver configured");
        auto presentation = vc::Presentation::parse(token);
        if (presentation.credential.disclosures.empty() && !req.required_claims.empty())
            throw Error(ErrorCode::UnknownClaim, "nothing disclosed");
        auto claims = vc::verify_presentation(presentation, policy, *config_.resolver, config_.status.get());
        for (auto &name : req.required_claims)
            if (!claims.claims.contains(name)) throw Error(ErrorCode::UnknownClaim, name);
        return claims;
    }

    void poll_verification() {
        auto &v = verifier_;
        if (!v.pending.valid() || v.pending.wait_for(std::chrono::seconds(0)) != std::future_status::ready) return;
        Json result{{"request_id", v.request->request_id}};
        try {
            auto claims = v.pending.get();
            v.result = IdentificationResult{claims.claims, claims.subject, claims.holder_binding_checked,
                                            to_ms(Clock::now() - v.started_at)};
            result["verified"] = true;
        } catch (const Error &e) {
            std::string code(e.code_string());
            v.error = Error(ErrorCode::VerificationFailed, code);
            result["verified"] = false;
            result["reason"] = code;
        }
        v.state = VerifierFlow::awaiting_complete;
        send(FrameType::result, v.flow, result);
    }

    // Frames on the flow where this side presents.
    void on_prover_frame(const Frame &f) {
        auto &p = prover_;
        if (p.done) protocol_error(f.flow, "unexpected frame on finished flow");
        if (f.type == FrameType::identification_complete && p.state == ProverFlow::awaiting_request) {
            p.done = true;
            return;
        }
        if (f.type == FrameType::presentation_request && p.state == ProverFlow::awaiting_request) {
            auto req = PresentationRequest::from_json(from_payload(f));
            present(req);
            return;
        }
        if (f.type == FrameType::result && p.state == ProverFlow::awaiting_result) {
            auto j = from_payload(f);
            p.accepted = j.value("verified", false);
            if (!*p.accepted) p.rejection = j.value("reason", std::string("unspecified"));
            send(FrameType::identification_complete, p.flow, Json::object());
            p.done = true;
            return;
        }
        if (f.type == FrameType::error) {
            auto j = from_payload(f);
            violation("peer reported " + j.value("code", std::string("error")) + ": " + j.value("detail", ""));
        }
        protocol_error(f.flow, "frame out of order on prover flow");
    }

    void present(const PresentationRequest &req) {
        auto &p = prover_;
        const vc::SdJwtCredential *chosen = nullptr;
        for (auto &c : config_.credentials) {
            if (!req.accepted_issuers.empty() &&
                std::find(req.accepted_issuers.begin(), req.accepted_issuers.end(), c.issuer) ==
                    req.accepted_issuers.end())
                continue;
            auto names = c.claim_names();
            bool covers = std::all_of(req.required_claims.begin(), req.required_claims.end(), [&](const auto &n) {
                return std::find(names.begin(), names.end(), n) != names.end();
            });
            if (covers) {
                chosen = &c;
                break;
            }
        }
        // Fall back to the first credential so the verifier reports why it
        // does not qualify.
        if (!chosen && !config_.credentials.empty() && req.required_claims.empty()) chosen = &config_.credentials[0];
        if (!chosen) {
            send(FrameType::error, p.flow,
                 {{"code", "peer_refused"}, {"detail", "no matching credential"}, {"request_id", req.request_id}});
            p.done = true;
            p.accepted = false;
            p.rejection = "peer_refused";
            return;
        }

        std::optional<vc::HolderProof> proof;
        bool subject_is_channel = config_.self_did && *config_.self_did == chosen->subject;
        if (!subject_is_channel && config_.holder_key) {
            std::string audience = req.domain.value_or(
                session_.peer().peer_did ? session_.peer().peer_did->full() : session_.offer().target_server.value_or(""));
            proof = vc::HolderProof{config_.holder_key, config_.holder_key_id, req.nonce, audience, config_.clock()};
        }
        std::vector<std::string> disclose;
        auto names = chosen->claim_names();
        for (auto &n : req.required_claims)
            if (std::find(names.begin(), names.end(), n) != names.end()) disclose.push_back(n);
        auto presentation = vc::derive_presentation(*chosen, disclose, proof);
        Json submission{{"presentation_submission",
                         {{"id", fresh_token()},
                          {"definition_id", req.request_id},
                          {"descriptor_map",
                           Json::array({{{"id", kDescriptorId}, {"format", "vc+sd-jwt"}, {"path", "$.vp_token"}}})}}},
                        {"vp_token", presentation.serialize()}};
        send(FrameType::presentation, p.flow, submission);
        p.state = ProverFlow::awaiting_result;
    }

    channel::SecureSession &session_;
    const Config &config_;
    VerifierFlow verifier_;
    ProverFlow prover_;
};

} // namespace

Outcome run_identification(channel::SecureSession &session, const Config &config) {
    return Runner(session, config).run();
}

} // namespace didlink::identity
