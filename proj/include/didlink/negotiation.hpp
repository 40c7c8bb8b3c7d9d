#pragma once

#include <bitset>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "didlink/cert.hpp"
#include "didlink/did.hpp"

namespace didlink::negotiation {

namespace ext {
constexpr std::uint16_t sni = 0x0000;
constexpr std::uint16_t cni = 0xFF00;
constexpr std::uint16_t cmi = 0xFF01;
constexpr std::uint16_t smi = 0xFF02;
constexpr std::uint16_t cpp = 0xFF03;
constexpr std::uint16_t spa = 0xFF04;
/// TLS reserves 0xFF01 (renegotiation_info), so CMI travels under this code
/// when carried in a real ClientHello.
constexpr std::uint16_t cmi_in_hello = 0xFF05;
} // namespace ext

inline constexpr std::string_view kDifPe2 = "dif-pe-2";

enum class ClientAuthMode { none, cert, did, did_vc };
enum class ServerAuthMode { cert_default, cert, did_default, did, did_vc_default, did_vc };
std::string_view to_string(ClientAuthMode mode) noexcept;
std::string_view to_string(ServerAuthMode mode) noexcept;

struct Extension {
    std::uint16_t code = 0;
    Bytes payload;
    friend bool operator==(const Extension &, const Extension &) = default;
};

/// What the client puts on the wire.
struct OfferExtensions {
    /// SNI: a DID or, for CA-certified servers, a hostname.
    std::optional<std::string> target_server;
    std::optional<Did> client_did;                   // CNI
    std::vector<std::string> client_did_methods;     // CMI
    std::vector<std::string> presentation_protocols; // CPP

    friend bool operator==(const OfferExtensions &, const OfferExtensions &) = default;
};

struct NegotiationOffer : OfferExtensions {
    ClientAuthMode client_auth_mode = ClientAuthMode::none;
};

/// What the server puts on the wire.
struct AgreementExtensions {
    std::vector<std::string> server_did_methods;            // SMI
    std::optional<std::string> agreed_presentation_protocol; // SPA

    friend bool operator==(const AgreementExtensions &, const AgreementExtensions &) = default;
};

struct NegotiationAgreement : AgreementExtensions {
    ServerAuthMode server_auth_mode = ServerAuthMode::cert_default;
    bool identification_enabled = false;
    /// Index into ServerCaps::identities of the identity to present.
    std::size_t identity_index = 0;
};

enum class RejectionReason { no_common_method, no_common_presentation_protocol, unknown_server_did };
std::string_view to_string(RejectionReason reason) noexcept;

struct Rejection {
    RejectionReason reason;
};

struct ServerIdentity {
    CertBundle bundle;
    /// DID for DID-bearing certificates, otherwise the DNS name / CN.
    std::string name;
    /// Whether this identity can present credentials after the handshake.
    bool has_credentials = false;

    bool did_based() const noexcept { return bundle.kind == CertKind::did_self_issued; }
};
ServerIdentity make_server_identity(CertBundle bundle, bool has_credentials = false);

struct ServerCaps {
    std::vector<std::string> supported_methods;
    std::vector<std::string> supported_presentation_protocols{std::string(kDifPe2)};
    std::vector<ServerIdentity> identities;
    std::size_t default_identity = 0;
    /// The server will authenticate a DID-bearing client certificate.
    bool verify_client_did = false;
    /// Whether SMI is sent when its preconditions hold.
    bool announce_methods = true;
};

using Outcome = std::variant<NegotiationAgreement, Rejection>;

/// Deterministic server decision for an offer.
Outcome negotiate(const NegotiationOffer &offer, const ServerCaps &caps);

/// Throws OversizePayload when a field cannot be encoded, MalformedPayload for
/// empty list entries.
std::vector<Extension> encode_extensions(const OfferExtensions &offer);
std::vector<Extension> encode_extensions(const AgreementExtensions &agreement);
/// Unknown codes are ignored. Throws MalformedPayload.
OfferExtensions decode_offer(const std::vector<Extension> &extensions);
AgreementExtensions decode_agreement(const std::vector<Extension> &extensions);

/// Single-extension payload codecs, shared with the TLS hello hooks.
Bytes encode_name_list(const std::string &host_name); // RFC 6066 ServerNameList
std::string decode_name_list(ByteView payload);
Bytes encode_did(const Did &did);
Did decode_did(ByteView payload);
Bytes encode_list(const std::vector<std::string> &entries);
std::vector<std::string> decode_list(ByteView payload);

/// code(2) ‖ length(2) ‖ payload, repeated; used by the preamble transport.
Bytes serialize_extensions(const std::vector<Extension> &extensions);
std::vector<Extension> parse_extensions(ByteView block);

enum class ExtensionId { SNI, CNI, CMI, SMI, CPP, SPA };
using ExtensionSet = std::bitset<6>;
ExtensionSet extension_set(const OfferExtensions &offer, const AgreementExtensions &agreement);
std::string describe(ExtensionSet set);

enum class RowGroup { legacy, did_vc_enabled, hybrid };

struct ScenarioClass {
    int row = 0; // 1-based position in the authentication scenario table
    RowGroup group = RowGroup::legacy;
    std::string client_label;
    std::string server_label;
    ExtensionSet extensions_present;
};

/// Throws NoMatchingRow for combinations outside the table.
ScenarioClass classify_scenario(const NegotiationOffer &offer, const NegotiationAgreement &agreement);

/// Cell value in the table: required, absent or optional.
enum class Cell { yes, no, optional };

struct ScenarioRow {
    int row;
    RowGroup group;
    ClientAuthMode client;
    ServerAuthMode server;
    Cell sni, cni, cmi, smi;
    bool credentials_involved;
    std::string client_label;
    std::string server_label;
};
const std::vector<ScenarioRow> &scenario_rows();

/// One (offer, caps) pair per conformant setting of every row; rows with
/// optional cells appear once per admissible variant.
struct ConformanceCase {
    int row;
    ExtensionSet expected;
    NegotiationOffer offer;
    ServerCaps caps;
};
std::vector<ConformanceCase> conformance_cases();

} // namespace didlink::negotiation
