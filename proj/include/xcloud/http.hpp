#pragma once

// Single inclusion point for cpp-httplib so every translation unit sees the
// same limits.

// Image uploads arrive as form fields far larger than httplib's default form
// limit; the server's payload cap applies instead.
#ifndef CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH
#define CPPHTTPLIB_FORM_URL_ENCODED_PAYLOAD_MAX_LENGTH (1u << 30)
#endif
// The default backlog of 5 drops connections when a load test opens many at once.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#endif
// Small request/response writes otherwise stall on Nagle + delayed ACK.
#ifndef CPPHTTPLIB_TCP_NODELAY
#define CPPHTTPLIB_TCP_NODELAY true
#endif
#include "httplib.h"
