#pragma once

#include <stdexcept>
#include <string>

namespace mantis {

// Base for all library errors. Subclasses carry a stable kind() string so the
// CLI can emit single-line machine-parsable diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define MANTIS_DEFINE_ERROR(name)                                    \
    class name : public Error {                                      \
    public:                                                          \
        explicit name(const std::string& message)                    \
            : Error(#name, message) {}                               \
    }

// apk container / manifest decoding
MANTIS_DEFINE_ERROR(TruncatedArchive);
MANTIS_DEFINE_ERROR(BadCentralDirectory);
MANTIS_DEFINE_ERROR(UnsupportedCompression);
MANTIS_DEFINE_ERROR(ManifestMissing);
MANTIS_DEFINE_ERROR(DecompressionFailure);
MANTIS_DEFINE_ERROR(CorruptStringPool);
MANTIS_DEFINE_ERROR(NotManifestData);

// dataset
MANTIS_DEFINE_ERROR(MissingColumn);
MANTIS_DEFINE_ERROR(BadLabel);
MANTIS_DEFINE_ERROR(UnknownCategory);
MANTIS_DEFINE_ERROR(CategoryOnBenign);
MANTIS_DEFINE_ERROR(EmptyCorpus);
MANTIS_DEFINE_ERROR(EmptyDataset);
MANTIS_DEFINE_ERROR(MissingCategory);

// tensor / model
MANTIS_DEFINE_ERROR(ShapeMismatch);
MANTIS_DEFINE_ERROR(IdOutOfRange);
MANTIS_DEFINE_ERROR(NonScalarRoot);
MANTIS_DEFINE_ERROR(MissingGradient);
MANTIS_DEFINE_ERROR(BadConfig);
MANTIS_DEFINE_ERROR(MlmHeadAbsent);
MANTIS_DEFINE_ERROR(BadCheckpoint);
MANTIS_DEFINE_ERROR(VocabHashMismatch);

// metrics
MANTIS_DEFINE_ERROR(EmptyCounts);
MANTIS_DEFINE_ERROR(LengthMismatch);
MANTIS_DEFINE_ERROR(LabelOutOfRange);

// clients
MANTIS_DEFINE_ERROR(AuthFailure);
MANTIS_DEFINE_ERROR(RateLimited);
MANTIS_DEFINE_ERROR(FixtureMissing);
MANTIS_DEFINE_ERROR(HashMismatch);
MANTIS_DEFINE_ERROR(NotFound);
MANTIS_DEFINE_ERROR(UnknownHash);
MANTIS_DEFINE_ERROR(UnmappableCategory);

// generic I/O
MANTIS_DEFINE_ERROR(IoError);

#undef MANTIS_DEFINE_ERROR

}  // namespace mantis
