#pragma once

#include <cstdint>
#include <string>

namespace didlink {

enum class CredentialStatus { valid, revoked };

/// Source of revocation bits for credentials carrying a status reference.
class StatusChecker {
  public:
    virtual ~StatusChecker() = default;
    /// Throws Error(NotFound) for unknown lists, Error(IndexOutOfRange) for
    /// indices past the list size.
    virtual CredentialStatus check_status(const std::string &list_id, std::uint32_t index) = 0;
};

} // namespace didlink
