#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "didlink/did.hpp"

namespace didlink {

enum class CacheMode { prefer_cache, force_resolve, cache_only };

struct CachePolicy {
    std::chrono::seconds max_age{300};
    CacheMode mode = CacheMode::prefer_cache;

    static CachePolicy force() { return {std::chrono::seconds(300), CacheMode::force_resolve}; }
    static CachePolicy cached_only() { return {std::chrono::seconds(300), CacheMode::cache_only}; }
};

enum class ResolutionSource { cache, method_handler };
std::string_view to_string(ResolutionSource source) noexcept;

struct ResolutionResult {
    DidDocument document;
    ResolutionSource source;
    std::chrono::microseconds resolved_in;
    Timestamp fresh_until;
};

/// Resolves one DID method. Implementations may block; transport failures must
/// surface as Error(RegistryUnavailable), absent entries as Error(NotFound).
class MethodHandler {
  public:
    virtual ~MethodHandler() = default;
    virtual DidDocument resolve(const Did &did) = 0;
    /// Documents derivable from the identifier itself bypass the cache.
    virtual bool self_contained() const { return false; }
};

/// did:key and did:peer:0.
class DerivedMethodHandler final : public MethodHandler {
  public:
    DidDocument resolve(const Did &did) override { return derive_document(did); }
    bool self_contained() const override { return true; }
};

class DidResolver {
  public:
    /// Registers the derived "key" and "peer" handlers.
    explicit DidResolver(ClockFn clock = &didlink::now);

    void register_handler(const std::string &method, std::shared_ptr<MethodHandler> handler);
    bool supports(const std::string &method) const;

    ResolutionResult resolve(const Did &did, const CachePolicy &policy = {});
    void seed_cache(const DidDocument &document, Timestamp fresh_until);
    void evict(const Did &did);
    void clear_cache();
    std::optional<DidDocument> cached(const Did &did) const;

    std::uint64_t handler_calls() const noexcept { return handler_calls_.load(); }
    std::uint64_t cache_misses() const noexcept { return cache_misses_.load(); }
    std::uint64_t forced_resolves() const noexcept { return forced_.load(); }
    std::uint64_t cache_hits() const noexcept { return cache_hits_.load(); }

  private:
    struct Entry {
        std::shared_ptr<const DidDocument> document;
        Timestamp stored_at;
        Timestamp fresh_until;
    };

    std::shared_ptr<MethodHandler> handler_for(const Did &did) const;
    ResolutionResult call_handler(MethodHandler &handler, const Did &did, const CachePolicy &policy,
                                  std::chrono::steady_clock::time_point started, bool cache_result);

    ClockFn clock_;
    mutable std::shared_mutex handlers_mutex_;
    std::map<std::string, std::shared_ptr<MethodHandler>> handlers_;
    mutable std::shared_mutex cache_mutex_;
    std::map<std::string, Entry> cache_;
    std::atomic<std::uint64_t> handler_calls_{0};
    std::atomic<std::uint64_t> cache_misses_{0};
    std::atomic<std::uint64_t> forced_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
};

} // namespace didlink
