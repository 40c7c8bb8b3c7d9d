#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>

#include "didlink/resolver.hpp"
#include "didlink/status.hpp"
#include "didlink/vdr.hpp"

namespace didlink::testing {

/// Manually advanced wall clock.
class FakeClock {
  public:
    explicit FakeClock(Timestamp start = from_unix(1'700'000'000)) : now_(start) {}
    Timestamp now() const {
        std::lock_guard lock(mutex_);
        return now_;
    }
    void advance(std::chrono::seconds d) {
        std::lock_guard lock(mutex_);
        now_ += d;
    }
    ClockFn fn() {
        return [this] { return now(); };
    }

  private:
    mutable std::mutex mutex_;
    Timestamp now_;
};

/// Resolves did:vdrsim straight from an in-process ledger and counts calls.
class LedgerHandler final : public MethodHandler {
  public:
    explicit LedgerHandler(std::shared_ptr<vdr::Ledger> ledger) : ledger_(std::move(ledger)) {}
    DidDocument resolve(const Did &did) override {
        ++calls;
        return ledger_->lookup(did);
    }
    std::atomic<int> calls{0};

  private:
    std::shared_ptr<vdr::Ledger> ledger_;
};

/// Status bits read straight from an in-process ledger.
class LedgerStatus final : public StatusChecker {
  public:
    explicit LedgerStatus(std::shared_ptr<vdr::Ledger> ledger) : ledger_(std::move(ledger)) {}
    CredentialStatus check_status(const std::string &list_id, std::uint32_t index) override {
        return ledger_->get_status(list_id, index).revoked ? CredentialStatus::revoked : CredentialStatus::valid;
    }

  private:
    std::shared_ptr<vdr::Ledger> ledger_;
};

struct Identity {
    KeyPair key;
    KeyPair agreement;
    DidDocument document;
};

inline Identity anchored_identity(vdr::Ledger &ledger) {
    auto key = KeyPair::generate(KeyType::Ed25519);
    auto agreement = KeyPair::generate(KeyType::X25519);
    auto doc = vdr::make_vdrsim_document(key, agreement);
    ledger.anchor(doc, key.sign(as_bytes(doc.canonical())));
    return {std::move(key), std::move(agreement), std::move(doc)};
}

/// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("didlink-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path &path() const { return path_; }

  private:
    std::filesystem::path path_;
};

} // namespace didlink::testing
