#pragma once

// Process-level numeric and allocator settings for long training runs.
namespace gridflow {

/// Flushes denormal floats to zero while alive and restores the previous
/// mode on exit. A no-op on targets without SSE control registers.
class FlushDenormals {
public:
    FlushDenormals();
    ~FlushDenormals();
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
    unsigned saved_ = 0;
};

/// Keeps freed tape buffers in the heap instead of returning them to the
/// kernel. Call once at program start; a no-op outside glibc.
void tune_allocator();

}  // namespace gridflow
